use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CorpusManifest, Emotion, PairEntry, SaliencyRecord, Split, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::features::{
    write_feature_file, FeatureMatrix, DEFAULT_CONTEXT_FRAMES, DEFAULT_MFCC_DIM,
};
use crate::seed;

/// Coupling of the first cepstral coefficient to F0, per Hz.
const CEPSTRAL_PITCH_COUPLING: f64 = 0.05;
const NOISE_SMOOTHING_FRAMES: f64 = 6.0;
const FEATURE_DIR: &str = "features";

/// Deterministic neutral-to-emotion transform of one target class.
///
/// Target F0 on voiced frames is
/// `pitch_scale * f0 + pitch_shift + tilt * (t - centre) / 128 + noise`,
/// where `noise` is Gaussian-smoothed white noise with standard deviation
/// `smooth_noise_amp`. Target cepstra add `spectral_shift` and follow the
/// F0 change through the first coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionTransform {
    pub emotion: Emotion,
    pub pitch_shift: f64,
    pub pitch_scale: f64,
    /// Hz of linear drift per 128-frame window.
    pub tilt: f64,
    pub smooth_noise_amp: f64,
    pub spectral_shift: Vec<f64>,
}

impl EmotionTransform {
    pub fn preset(emotion: Emotion) -> Self {
        let (pitch_shift, pitch_scale, tilt, smooth_noise_amp, sign) = match emotion {
            Emotion::Angry => (25.0, 1.15, 15.0, 4.0, 1.0),
            Emotion::Happy => (35.0, 1.2, -10.0, 5.0, 0.5),
            Emotion::Sad => (-20.0, 0.9, -12.0, 3.0, -1.0),
            Emotion::Neutral => (0.0, 1.0, 0.0, 0.0, 0.0),
        };
        let spectral_shift = (0..DEFAULT_MFCC_DIM)
            .map(|d| sign * 2.0 / (1.0 + d as f64))
            .collect();
        Self {
            emotion,
            pitch_shift,
            pitch_scale,
            tilt,
            smooth_noise_amp,
            spectral_shift,
        }
    }

    /// Noise-free target F0 of frame `t` in an utterance of `len` frames.
    pub fn mean_target(&self, f0: f64, t: usize, len: usize) -> f64 {
        let centre = (len as f64 - 1.0) / 2.0;
        self.pitch_scale * f0
            + self.pitch_shift
            + self.tilt * (t as f64 - centre) / DEFAULT_CONTEXT_FRAMES as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEmotionSpec {
    pub transforms: Vec<EmotionTransform>,
    pub seed: u64,
    pub min_frames: usize,
    pub max_frames: usize,
    pub mfcc_dim: usize,
    pub speakers: usize,
}

impl Default for SyntheticEmotionSpec {
    fn default() -> Self {
        Self {
            transforms: vec![EmotionTransform::preset(Emotion::Angry)],
            seed: 0,
            min_frames: DEFAULT_CONTEXT_FRAMES,
            max_frames: 2 * DEFAULT_CONTEXT_FRAMES,
            mfcc_dim: DEFAULT_MFCC_DIM,
            speakers: 10,
        }
    }
}

impl SyntheticEmotionSpec {
    pub fn for_emotions(emotions: &[Emotion], seed: u64) -> Self {
        Self {
            transforms: emotions.iter().map(|e| EmotionTransform::preset(*e)).collect(),
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_frames < DEFAULT_CONTEXT_FRAMES || self.max_frames < self.min_frames {
            return Err(Error::Config(format!(
                "frame range {}..={} must start at {DEFAULT_CONTEXT_FRAMES} or more",
                self.min_frames, self.max_frames
            )));
        }
        if self.mfcc_dim < 2 || self.speakers == 0 {
            return Err(Error::Config("mfcc_dim >= 2 and speakers >= 1 required".into()));
        }
        for t in &self.transforms {
            if !(t.pitch_scale > 0.0) {
                return Err(Error::Config(format!(
                    "{} pitch_scale must be > 0, got {}",
                    t.emotion, t.pitch_scale
                )));
            }
            if t.spectral_shift.len() != self.mfcc_dim {
                return Err(Error::Config(format!(
                    "{} spectral_shift has {} entries, mfcc_dim is {}",
                    t.emotion,
                    t.spectral_shift.len(),
                    self.mfcc_dim
                )));
            }
            if t.emotion == Emotion::Neutral {
                return Err(Error::Config("target emotion must not be neutral".into()));
            }
        }
        Ok(())
    }
}

struct Utterance {
    f0: Vec<f64>,
    voiced: Vec<bool>,
    cepstra: Vec<f64>,
}

/// Writes `n_pairs` neutral utterances and one converted version per
/// transform under `out_dir`, plus `manifest.json`. Output depends only on
/// `(spec, n_pairs)`.
pub fn generate_synthetic_corpus(
    spec: &SyntheticEmotionSpec,
    n_pairs: usize,
    out_dir: impl AsRef<Path>,
) -> Result<CorpusManifest> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    let feature_dir = out_dir.join(FEATURE_DIR);
    fs::create_dir_all(&feature_dir).map_err(|e| Error::io(&feature_dir, e))?;

    let per_utterance: Vec<Vec<PairEntry>> = (0..n_pairs)
        .into_par_iter()
        .map(|i| write_utterance(spec, i, out_dir))
        .collect::<Result<_>>()?;
    let mut pairs: Vec<PairEntry> = per_utterance.into_iter().flatten().collect();
    pairs.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));

    let mut manifest = CorpusManifest::new(out_dir, pairs);
    manifest.mfcc_dim = spec.mfcc_dim;
    let path = out_dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_json()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn write_utterance(spec: &SyntheticEmotionSpec, index: usize, out_dir: &Path) -> Result<Vec<PairEntry>> {
    let utterance_id = format!("utt{index:05}");
    let neutral = neutral_utterance(spec, index);
    let dim = spec.mfcc_dim;
    let len = neutral.f0.len();
    let save = |name: &str, cols: usize, data: &[f64]| -> Result<String> {
        let rel = format!("{FEATURE_DIR}/{utterance_id}-{name}");
        let m = FeatureMatrix::new(len, cols, data.to_vec())?;
        write_feature_file(out_dir.join(&rel), &m)?;
        Ok(rel)
    };
    let f0_source_path = save("neutral.f0.emo1", 1, &neutral.f0)?;
    let spec_source_path = save("neutral.mfcc.emo1", dim, &neutral.cepstra)?;

    let mut entries = Vec::with_capacity(spec.transforms.len());
    for transform in &spec.transforms {
        let label = format!("target-{}", transform.emotion);
        let mut rng = seed::rng(spec.seed, &label, index as u64);
        let noise = smooth_noise(&mut rng, len, transform.smooth_noise_amp);
        let mut f0 = vec![0.0; len];
        for t in 0..len {
            if neutral.voiced[t] {
                f0[t] = (transform.mean_target(neutral.f0[t], t, len) + noise[t]).max(50.0);
            }
        }
        let spec_noise: Vec<Vec<f64>> = (0..dim).map(|_| smooth_noise(&mut rng, len, 0.1)).collect();
        let mut cepstra = neutral.cepstra.clone();
        for t in 0..len {
            for d in 0..dim {
                let mut v = cepstra[t * dim + d] + transform.spectral_shift[d] + spec_noise[d][t];
                if d == 1 && neutral.voiced[t] {
                    v += CEPSTRAL_PITCH_COUPLING * (f0[t] - neutral.f0[t]);
                }
                cepstra[t * dim + d] = v;
            }
        }
        let emotion = transform.emotion.as_str();
        let f0_target_path = save(&format!("{emotion}.f0.emo1"), 1, &f0)?;
        let spec_target_path = save(&format!("{emotion}.mfcc.emo1"), dim, &cepstra)?;
        let raters_correct = rng.gen_range(3..=10);
        entries.push(PairEntry {
            pair_id: format!("{emotion}-{index:05}"),
            speaker_id: format!("spk{:02}", index % spec.speakers),
            source_emotion: Emotion::Neutral,
            target_emotion: transform.emotion,
            f0_source_path: f0_source_path.clone(),
            f0_target_path,
            spec_source_path: spec_source_path.clone(),
            spec_target_path,
            momenta_path: None,
            saliency: SaliencyRecord {
                utterance_id: utterance_id.clone(),
                emotion: transform.emotion,
                raters_total: 10,
                raters_correct,
            },
            split: Split::Unassigned,
        });
    }
    Ok(entries)
}

fn neutral_utterance(spec: &SyntheticEmotionSpec, index: usize) -> Utterance {
    let mut rng = seed::rng(spec.seed, "neutral", index as u64);
    let len = rng.gen_range(spec.min_frames..=spec.max_frames);

    let base: f64 = rng.gen_range(110.0..200.0);
    let declination: f64 = rng.gen_range(0.0..25.0);
    let partials: Vec<(f64, f64, f64)> = (1..=4)
        .map(|k| {
            let amp = rng.gen_range(2.0..18.0) / k as f64;
            let cycles = rng.gen_range(0.5..3.0) * k as f64;
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            (amp, cycles, phase)
        })
        .collect();
    let mut voiced = vec![true; len];
    for _ in 0..rng.gen_range(0..=2) {
        let gap = rng.gen_range(3..=8);
        let start = rng.gen_range(8..len - 8 - gap);
        voiced[start..start + gap].fill(false);
    }
    let f0: Vec<f64> = (0..len)
        .map(|t| {
            if !voiced[t] {
                return 0.0;
            }
            let x = t as f64 / len as f64;
            let wave: f64 = partials
                .iter()
                .map(|(a, c, p)| a * (std::f64::consts::TAU * c * x + p).sin())
                .sum();
            (base - declination * x + wave).clamp(80.0, 300.0)
        })
        .collect();

    let dim = spec.mfcc_dim;
    let means: Vec<f64> = (0..dim)
        .map(|d| rng.sample::<f64, _>(StandardNormal) * 8.0 / (1.0 + d as f64))
        .collect();
    let tracks: Vec<Vec<f64>> = (0..dim)
        .map(|d| smooth_noise(&mut rng, len, 3.0 / (1.0 + d as f64)))
        .collect();
    let mut cepstra = vec![0.0; len * dim];
    for t in 0..len {
        for d in 0..dim {
            let mut v = means[d] + tracks[d][t];
            if d == 1 && voiced[t] {
                v += CEPSTRAL_PITCH_COUPLING * (f0[t] - 150.0);
            }
            cepstra[t * dim + d] = v;
        }
    }
    Utterance { f0, voiced, cepstra }
}

/// Gaussian-smoothed white noise rescaled to standard deviation `amp`.
fn smooth_noise(rng: &mut impl Rng, len: usize, amp: f64) -> Vec<f64> {
    let white: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
    if amp == 0.0 {
        return vec![0.0; len];
    }
    let radius = (3.0 * NOISE_SMOOTHING_FRAMES) as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * NOISE_SMOOTHING_FRAMES * NOISE_SMOOTHING_FRAMES)).exp())
        .collect();
    let smoothed: Vec<f64> = (0..len as isize)
        .map(|t| {
            taps.iter()
                .enumerate()
                .map(|(k, w)| {
                    let idx = (t + k as isize - radius).clamp(0, len as isize - 1);
                    w * white[idx as usize]
                })
                .sum()
        })
        .collect();
    let mean = smoothed.iter().sum::<f64>() / len as f64;
    let sd = (smoothed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len as f64).sqrt();
    smoothed.iter().map(|v| amp * (v - mean) / sd.max(1e-12)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_noise_has_requested_spread() {
        let mut rng = seed::rng(1, "t", 0);
        let n = smooth_noise(&mut rng, 500, 4.0);
        let mean = n.iter().sum::<f64>() / 500.0;
        let sd = (n.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 500.0).sqrt();
        assert!(mean.abs() < 1e-9);
        assert!((sd - 4.0).abs() < 1e-9);
    }

    #[test]
    fn empty_corpus_writes_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_synthetic_corpus(&SyntheticEmotionSpec::default(), 0, dir.path()).unwrap();
        assert!(m.pairs.is_empty());
        assert!(dir.path().join(MANIFEST_FILE).is_file());
    }

    #[test]
    fn invalid_scale_rejected() {
        let mut spec = SyntheticEmotionSpec::default();
        spec.transforms[0].pitch_scale = 0.0;
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
    }
}
