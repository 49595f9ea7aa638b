//! Parallel emotional-speech corpus: the JSON manifest, ingestion rules
//! (saliency filter, seeded splits) and a synthetic corpus generator.

mod ingest;
mod synth;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    read_feature_file, F0Contour, Momenta, SpectralFrames, DEFAULT_FRAME_STEP_MS, DEFAULT_MFCC_DIM,
};

pub use ingest::{
    filter_by_saliency, hold_out_utterances, split_corpus, split_per_emotion_pair, SplitCounts, DEFAULT_MIN_CORRECT,
};
pub use synth::{generate_synthetic_corpus, EmotionTransform, SyntheticEmotionSpec};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Neutral,
    Angry,
    Happy,
    Sad,
}

impl Emotion {
    pub fn as_str(self) -> &'static str {
        match self {
            Emotion::Neutral => "neutral",
            Emotion::Angry => "angry",
            Emotion::Happy => "happy",
            Emotion::Sad => "sad",
        }
    }
}

impl std::fmt::Display for Emotion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Emotion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neutral" => Ok(Emotion::Neutral),
            "angry" => Ok(Emotion::Angry),
            "happy" => Ok(Emotion::Happy),
            "sad" => Ok(Emotion::Sad),
            other => Err(Error::Config(format!("unknown emotion {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "unassigned" => Ok(Split::Unassigned),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Crowd rating of one utterance: how many of the raters recognised the
/// intended emotion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaliencyRecord {
    pub utterance_id: String,
    pub emotion: Emotion,
    pub raters_total: u32,
    pub raters_correct: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub pair_id: String,
    pub speaker_id: String,
    pub source_emotion: Emotion,
    pub target_emotion: Emotion,
    pub f0_source_path: String,
    pub f0_target_path: String,
    pub spec_source_path: String,
    pub spec_target_path: String,
    pub momenta_path: Option<String>,
    pub saliency: SaliencyRecord,
    pub split: Split,
}

impl PairEntry {
    /// `"<source>-<target>"`, the grouping key of evaluation reports.
    pub fn emotion_pair(&self) -> String {
        format!("{}-{}", self.source_emotion, self.target_emotion)
    }
}

/// Features of one pair, loaded from disk.
#[derive(Debug, Clone)]
pub struct PairFeatures {
    pub f0_source: F0Contour,
    pub f0_target: F0Contour,
    pub spec_source: SpectralFrames,
    pub spec_target: SpectralFrames,
    pub momenta: Option<Momenta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub version: u32,
    pub frame_step_ms: f64,
    pub mfcc_dim: usize,
    pub pairs: Vec<PairEntry>,
    /// Directory that relative feature paths are resolved against.
    #[serde(skip)]
    root: PathBuf,
}

impl CorpusManifest {
    pub fn new(root: impl Into<PathBuf>, pairs: Vec<PairEntry>) -> Self {
        Self {
            version: MANIFEST_VERSION,
            frame_step_ms: DEFAULT_FRAME_STEP_MS,
            mfcc_dim: DEFAULT_MFCC_DIM,
            pairs,
            root: root.into(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: CorpusManifest =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Format(format!(
                "unsupported manifest version {}",
                manifest.version
            )));
        }
        manifest.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }

    /// Pretty JSON with fields in declaration order and a trailing newline.
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        text
    }

    /// Writes the manifest to `path`, rewriting relative feature paths so
    /// they still resolve from the new location.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let new_root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let rebased = self.rebased(&new_root)?;
        fs::write(path, rebased.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Same manifest with every relative path re-expressed against `new_root`.
    pub fn rebased(&self, new_root: &Path) -> Result<Self> {
        let from = absolute(&self.root)?;
        let to = absolute(new_root)?;
        let mut out = self.clone();
        out.root = new_root.to_path_buf();
        if from == to {
            return Ok(out);
        }
        let rebase = |p: &str| -> Result<String> {
            let full = from.join(p);
            let rel = pathdiff::diff_paths(&full, &to).unwrap_or(full);
            Ok(rel.to_string_lossy().replace('\\', "/"))
        };
        for pair in &mut out.pairs {
            pair.f0_source_path = rebase(&pair.f0_source_path)?;
            pair.f0_target_path = rebase(&pair.f0_target_path)?;
            pair.spec_source_path = rebase(&pair.spec_source_path)?;
            pair.spec_target_path = rebase(&pair.spec_target_path)?;
            if let Some(m) = &pair.momenta_path {
                pair.momenta_path = Some(rebase(m)?);
            }
        }
        Ok(out)
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    /// Distinct `"<source>-<target>"` keys, sorted.
    pub fn emotion_pairs(&self) -> Vec<String> {
        let keys: std::collections::BTreeSet<String> = self.pairs.iter().map(PairEntry::emotion_pair).collect();
        keys.into_iter().collect()
    }

    /// The pairs of one emotion pair, with the same root.
    pub fn subset(&self, emotion_pair: &str) -> Self {
        Self {
            pairs: self.pairs.iter().filter(|p| p.emotion_pair() == emotion_pair).cloned().collect(),
            ..self.clone()
        }
    }

    pub fn pairs_in(&self, split: Split) -> impl Iterator<Item = &PairEntry> {
        self.pairs.iter().filter(move |p| p.split == split)
    }

    pub fn load_pair(&self, pair: &PairEntry) -> Result<PairFeatures> {
        let f0_source = F0Contour::from_matrix(&read_feature_file(self.resolve(&pair.f0_source_path))?)?;
        let f0_target = F0Contour::from_matrix(&read_feature_file(self.resolve(&pair.f0_target_path))?)?;
        let spec_source = SpectralFrames::new(read_feature_file(self.resolve(&pair.spec_source_path))?)?;
        let spec_target = SpectralFrames::new(read_feature_file(self.resolve(&pair.spec_target_path))?)?;
        let momenta = match &pair.momenta_path {
            Some(p) => Some(Momenta::from_matrix(&read_feature_file(self.resolve(p))?)?),
            None => None,
        };
        Ok(PairFeatures {
            f0_source,
            f0_target,
            spec_source,
            spec_target,
            momenta,
        })
    }

    /// Checks id uniqueness, neutral sources, rating bounds and that every
    /// referenced file exists.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for pair in &self.pairs {
            if !seen.insert(pair.pair_id.as_str()) {
                return Err(Error::Data(format!("duplicate pair id {}", pair.pair_id)));
            }
            if pair.source_emotion != Emotion::Neutral {
                return Err(Error::Data(format!(
                    "pair {} converts from {}, expected neutral",
                    pair.pair_id, pair.source_emotion
                )));
            }
            if pair.saliency.raters_correct > pair.saliency.raters_total {
                return Err(Error::Data(format!(
                    "pair {} has {} of {} raters correct",
                    pair.pair_id, pair.saliency.raters_correct, pair.saliency.raters_total
                )));
            }
            let paths = [
                Some(&pair.f0_source_path),
                Some(&pair.f0_target_path),
                Some(&pair.spec_source_path),
                Some(&pair.spec_target_path),
                pair.momenta_path.as_ref(),
            ];
            for p in paths.into_iter().flatten() {
                if !self.resolve(p).is_file() {
                    return Err(Error::Data(format!(
                        "pair {} references missing file {p}",
                        pair.pair_id
                    )));
                }
            }
        }
        Ok(())
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    let p = if p.as_os_str().is_empty() { Path::new(".") } else { p };
    std::path::absolute(p).map_err(|e| Error::io(p, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str) -> PairEntry {
        PairEntry {
            pair_id: id.into(),
            speaker_id: "spk0".into(),
            source_emotion: Emotion::Neutral,
            target_emotion: Emotion::Angry,
            f0_source_path: format!("features/{id}_a.f0"),
            f0_target_path: format!("features/{id}_b.f0"),
            spec_source_path: format!("features/{id}_a.mfcc"),
            spec_target_path: format!("features/{id}_b.mfcc"),
            momenta_path: None,
            saliency: SaliencyRecord {
                utterance_id: id.into(),
                emotion: Emotion::Angry,
                raters_total: 10,
                raters_correct: 7,
            },
            split: Split::Unassigned,
        }
    }

    #[test]
    fn json_key_order_is_stable() {
        let m = CorpusManifest::new("", vec![entry("a")]);
        let json = m.to_json();
        let keys = ["\"version\"", "\"frame_step_ms\"", "\"mfcc_dim\"", "\"pairs\""];
        let positions: Vec<usize> = keys.iter().map(|k| json.find(k).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        let back: CorpusManifest = serde_json::from_str(&json).unwrap();
        assert_eq!(back.pairs, m.pairs);
    }

    #[test]
    fn rebasing_keeps_paths_resolvable() {
        let m = CorpusManifest::new("corpus", vec![entry("a")]);
        let moved = m.rebased(Path::new("runs/x")).unwrap();
        assert_eq!(moved.pairs[0].f0_source_path, "../../corpus/features/a_a.f0");
    }

    #[test]
    fn validation_rejects_duplicates_and_non_neutral_sources() {
        let m = CorpusManifest::new("", vec![entry("a"), entry("a")]);
        assert!(matches!(m.validate(), Err(Error::Data(_))));
        let mut e = entry("b");
        e.source_emotion = Emotion::Sad;
        assert!(matches!(CorpusManifest::new("", vec![e]).validate(), Err(Error::Data(_))));
    }
}
