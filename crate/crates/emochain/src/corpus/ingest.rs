use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CorpusManifest, PairEntry, Split};
use crate::error::{Error, Result};
use crate::seed;

/// Minimum number of raters (out of 10) who must recognise the emotion.
pub const DEFAULT_MIN_CORRECT: u32 = 5;

/// Keeps the pairs whose saliency rating reaches `min_correct`, in order.
pub fn filter_by_saliency(pairs: &[PairEntry], min_correct: u32) -> Result<Vec<PairEntry>> {
    if let Some(p) = pairs.iter().find(|p| min_correct > p.saliency.raters_total) {
        return Err(Error::Precondition(format!(
            "min_correct {min_correct} exceeds the {} raters of pair {}",
            p.saliency.raters_total, p.pair_id
        )));
    }
    Ok(pairs
        .iter()
        .filter(|p| p.saliency.raters_correct >= min_correct)
        .cloned()
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn new(train: usize, val: usize, test: usize) -> Self {
        Self { train, val, test }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

/// Labels pairs train/val/test by a seeded shuffle; the rest are
/// unassigned. Pair order in the manifest is unchanged.
pub fn split_corpus(manifest: &CorpusManifest, counts: SplitCounts, seed: u64) -> Result<CorpusManifest> {
    let n = manifest.pairs.len();
    if counts.total() > n {
        return Err(Error::Count(format!(
            "requested {} + {} + {} pairs from a corpus of {n}",
            counts.train, counts.val, counts.test
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = manifest.clone();
    for (rank, &idx) in order.iter().enumerate() {
        out.pairs[idx].split = if rank < counts.train {
            Split::Train
        } else if rank < counts.train + counts.val {
            Split::Val
        } else if rank < counts.total() {
            Split::Test
        } else {
            Split::Unassigned
        };
    }
    Ok(out)
}

/// Applies [`split_corpus`] to every emotion pair separately, so each one
/// gets exactly `counts`. Each group's shuffle is seeded from `seed` and
/// its `"<source>-<target>"` key.
pub fn split_per_emotion_pair(manifest: &CorpusManifest, counts: SplitCounts, seed: u64) -> Result<CorpusManifest> {
    let mut out = manifest.clone();
    for group in manifest.emotion_pairs() {
        let subset = manifest.subset(&group);
        let split = split_corpus(&subset, counts, seed::derive_seed(seed, &group, 0))
            .map_err(|e| match e {
                Error::Count(m) => Error::Count(format!("{group}: {m}")),
                other => other,
            })?;
        let labels: BTreeMap<&str, Split> = split.pairs.iter().map(|p| (p.pair_id.as_str(), p.split)).collect();
        for pair in &mut out.pairs {
            if let Some(label) = labels.get(pair.pair_id.as_str()) {
                pair.split = *label;
            }
        }
    }
    Ok(out)
}

/// Moves every pair of `count` randomly chosen utterances to the test split,
/// so those utterances are never seen in training.
pub fn hold_out_utterances(manifest: &CorpusManifest, count: usize, seed: u64) -> Result<CorpusManifest> {
    let ids: BTreeSet<&str> = manifest
        .pairs
        .iter()
        .map(|p| p.saliency.utterance_id.as_str())
        .collect();
    if count > ids.len() {
        return Err(Error::Count(format!(
            "cannot hold out {count} of {} utterances",
            ids.len()
        )));
    }
    let mut ids: Vec<&str> = ids.into_iter().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held: BTreeSet<String> = ids[..count].iter().map(|s| s.to_string()).collect();
    let mut out = manifest.clone();
    for pair in &mut out.pairs {
        if held.contains(&pair.saliency.utterance_id) {
            pair.split = Split::Test;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Emotion, SaliencyRecord};

    fn pairs(ratings: &[u32]) -> Vec<PairEntry> {
        ratings
            .iter()
            .enumerate()
            .map(|(i, &r)| PairEntry {
                pair_id: format!("p{i:04}"),
                speaker_id: format!("spk{}", i % 10),
                source_emotion: Emotion::Neutral,
                target_emotion: Emotion::Angry,
                f0_source_path: String::new(),
                f0_target_path: String::new(),
                spec_source_path: String::new(),
                spec_target_path: String::new(),
                momenta_path: None,
                saliency: SaliencyRecord {
                    utterance_id: format!("u{}", i / 2),
                    emotion: Emotion::Angry,
                    raters_total: 10,
                    raters_correct: r,
                },
                split: Split::Unassigned,
            })
            .collect()
    }

    #[test]
    fn saliency_threshold() {
        let all = pairs(&[10, 4, 5, 9, 0]);
        let kept = filter_by_saliency(&all, DEFAULT_MIN_CORRECT).unwrap();
        let ids: Vec<_> = kept.iter().map(|p| p.pair_id.as_str()).collect();
        assert_eq!(ids, ["p0000", "p0002", "p0003"]);
        assert_eq!(filter_by_saliency(&all, 0).unwrap(), all);
        assert_eq!(filter_by_saliency(&pairs(&[10; 6]), 5).unwrap().len(), 6);
        assert!(matches!(filter_by_saliency(&all, 11), Err(Error::Precondition(_))));
    }

    #[test]
    fn split_sizes_and_overflow() {
        let m = CorpusManifest::new("", pairs(&[7; 20]));
        let s = split_corpus(&m, SplitCounts::new(12, 3, 2), 9).unwrap();
        let count = |split| s.pairs.iter().filter(|p| p.split == split).count();
        assert_eq!(
            (count(Split::Train), count(Split::Val), count(Split::Test), count(Split::Unassigned)),
            (12, 3, 2, 3)
        );
        let none = split_corpus(&m, SplitCounts::default(), 9).unwrap();
        assert!(none.pairs.iter().all(|p| p.split == Split::Unassigned));
        assert!(matches!(
            split_corpus(&m, SplitCounts::new(20, 1, 0), 9),
            Err(Error::Count(_))
        ));
    }

    #[test]
    fn per_group_split_gives_every_emotion_its_counts() {
        let mut all = pairs(&[7; 12]);
        for (i, p) in all.iter_mut().enumerate().filter(|(i, _)| i % 3 == 0) {
            p.target_emotion = Emotion::Sad;
            p.pair_id = format!("s{i:04}");
        }
        let m = CorpusManifest::new("", all);
        let s = split_per_emotion_pair(&m, SplitCounts::new(2, 1, 1), 4).unwrap();
        for group in ["neutral-angry", "neutral-sad"] {
            let sub = s.subset(group);
            let count = |split| sub.pairs.iter().filter(|p| p.split == split).count();
            assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (2, 1, 1), "{group}");
        }
        assert!(matches!(
            split_per_emotion_pair(&m, SplitCounts::new(5, 0, 0), 4),
            Err(Error::Count(m)) if m.starts_with("neutral-sad")
        ));
    }

    #[test]
    fn held_out_utterances_leave_training() {
        let m = CorpusManifest::new("", pairs(&[7; 20]));
        let s = split_corpus(&m, SplitCounts::new(20, 0, 0), 1).unwrap();
        let h = hold_out_utterances(&s, 3, 2).unwrap();
        let held: BTreeSet<_> = h
            .pairs
            .iter()
            .filter(|p| p.split == Split::Test)
            .map(|p| p.saliency.utterance_id.clone())
            .collect();
        assert_eq!(held.len(), 3);
        assert!(h
            .pairs
            .iter()
            .filter(|p| p.split == Split::Train)
            .all(|p| !held.contains(&p.saliency.utterance_id)));
    }
}
