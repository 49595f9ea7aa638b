use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{loss_and_gradients, save_checkpoint, unified_loss, ChainModel, ChainTargets, Lambdas, LossBreakdown};
use crate::corpus::{CorpusManifest, Split};
use crate::error::{Error, Result};
use crate::features::{window_starts, F0Contour, Momenta, SpectralFrames};
use crate::nn::{adam_step, AdamState, Tensor};
use crate::seed;

pub const LOSS_HEADER: &str = "step,term_momenta,term_pitch,term_spectrum,total";

/// One aligned utterance pair held in memory, with unvoiced frames of both
/// contours interpolated.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub pair_id: String,
    pub f0_source: F0Contour,
    pub spec_source: SpectralFrames,
    /// Required for training; optional for validation, where a missing
    /// file drops the momenta term.
    pub momenta: Option<Momenta>,
    pub f0_target: F0Contour,
    pub spec_target: SpectralFrames,
}

impl TrainingSample {
    pub fn len(&self) -> usize {
        self.f0_source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0_source.is_empty()
    }

    /// Input pitch, input spectrum and targets of the window at `start`.
    /// Without momenta the momenta target is zero.
    pub fn window(&self, start: usize, context: usize) -> Result<(Tensor, Tensor, ChainTargets)> {
        let column = |v: &[f64]| Tensor::raw([1, context, 1], v[start..start + context].to_vec());
        let frames = |s: &SpectralFrames| -> Result<Tensor> { Ok(Tensor::from_matrix(s.slice(start, context)?.matrix())) };
        Ok((
            column(self.f0_source.values()),
            frames(&self.spec_source)?,
            ChainTargets {
                momenta: match &self.momenta {
                    Some(m) => column(m.values()),
                    None => Tensor::zeros([1, context, 1]),
                },
                pitch: column(self.f0_target.values()),
                spectrum: frames(&self.spec_target)?,
            },
        ))
    }
}

/// Loads the pairs of `split`. Every pair needs matching frame counts and
/// at least `context` frames; training pairs also need a momenta file.
pub fn load_training_set(manifest: &CorpusManifest, split: Split, context: usize) -> Result<Vec<TrainingSample>> {
    manifest
        .pairs_in(split)
        .map(|pair| {
            if split == Split::Train && pair.momenta_path.is_none() {
                return Err(Error::Data(format!("training pair {} has no momenta file", pair.pair_id)));
            }
            let f = manifest.load_pair(pair)?;
            let momenta = f.momenta;
            let len = f.f0_source.len();
            let momenta_len = momenta.as_ref().map_or(len, Momenta::len);
            if [f.f0_target.len(), f.spec_source.frames(), f.spec_target.frames(), momenta_len]
                .iter()
                .any(|n| *n != len)
            {
                return Err(Error::Data(format!("pair {} has misaligned features", pair.pair_id)));
            }
            if len < context {
                return Err(Error::InputTooShort { len, context });
            }
            Ok(TrainingSample {
                pair_id: pair.pair_id.clone(),
                f0_source: f.f0_source.interpolate_unvoiced()?,
                spec_source: f.spec_source,
                momenta,
                f0_target: f.f0_target.interpolate_unvoiced()?,
                spec_target: f.spec_target,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainOptions {
    /// Steps between validation passes; the final step is always validated.
    pub validate_every: usize,
    /// Where the selected model is written, if anywhere.
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            validate_every: 500,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationRecord {
    pub step: usize,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Training loss of every step, measured before that step's update.
    pub losses: Vec<LossRecord>,
    pub validation: Vec<ValidationRecord>,
    /// Step whose parameters were kept; `None` without validation data,
    /// in which case the final parameters are kept.
    pub best_step: Option<usize>,
    pub model: ChainModel,
    pub checkpoint: Option<PathBuf>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(LOSS_HEADER);
        out.push('\n');
        for r in &self.losses {
            let l = r.loss;
            writeln!(out, "{},{},{},{},{}", r.step, l.term_momenta, l.term_pitch, l.term_spectrum, l.total).unwrap();
        }
        out
    }
}

/// Mean loss over every window (hop = context, right-aligned tail) of
/// every sample. Samples without momenta contribute no momenta term.
pub fn evaluate_loss(model: &ChainModel, samples: &[TrainingSample], lambdas: Lambdas) -> Result<LossBreakdown> {
    let context = model.config().context;
    let mut sum = [0.0; 4];
    let mut count = 0usize;
    for sample in samples {
        for start in window_starts(sample.len(), context, context)? {
            let (p, s, targets) = sample.window(start, context)?;
            let out = super::forward_chain(model, &p, &s)?;
            let weights = match sample.momenta {
                Some(_) => lambdas,
                None => Lambdas { momenta: 0.0, ..lambdas },
            };
            let l = unified_loss(&out, &targets, weights)?;
            for (acc, v) in sum.iter_mut().zip([l.term_momenta, l.term_pitch, l.term_spectrum, l.total]) {
                *acc += v;
            }
            count += 1;
        }
    }
    let n = count.max(1) as f64;
    Ok(LossBreakdown {
        term_momenta: sum[0] / n,
        term_pitch: sum[1] / n,
        term_spectrum: sum[2] / n,
        total: sum[3] / n,
    })
}

/// Trains on the manifest's train split and selects parameters by the
/// validation split's total loss.
pub fn train(model: ChainModel, manifest: &CorpusManifest, options: &TrainOptions) -> Result<TrainReport> {
    let context = model.config().context;
    let train_set = load_training_set(manifest, Split::Train, context)?;
    let val_set = load_training_set(manifest, Split::Val, context)?;
    train_samples(model, &train_set, &val_set, options)
}

/// Batch-size-one Adam on raw features. Every pair is cut into the windows
/// [`convert`](super::convert) uses (hop = context, right-aligned tail);
/// windows are visited in a seeded shuffled order, reshuffled every pass.
pub fn train_samples(
    mut model: ChainModel,
    train_set: &[TrainingSample],
    val_set: &[TrainingSample],
    options: &TrainOptions,
) -> Result<TrainReport> {
    let config = model.config().clone();
    let context = config.context;
    if train_set.is_empty() && config.max_steps > 0 {
        return Err(Error::Data("no training pairs".into()));
    }
    if let Some(s) = train_set.iter().find(|s| s.momenta.is_none()) {
        return Err(Error::Data(format!("training pair {} has no momenta", s.pair_id)));
    }
    if let Some(s) = train_set.iter().chain(val_set).find(|s| s.len() < context) {
        return Err(Error::InputTooShort { len: s.len(), context });
    }
    let lambdas = config.lambdas();
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_seed(config.seed, "train", 0));
    let mut adam = [
        AdamState::new(model.theta_e.len()),
        AdamState::new(model.theta_d.len()),
        AdamState::new(model.theta_p.len()),
    ];
    let mut order: Vec<(usize, usize)> = Vec::new();
    for (i, sample) in train_set.iter().enumerate() {
        order.extend(window_starts(sample.len(), context, context)?.into_iter().map(|start| (i, start)));
    }
    let mut losses = Vec::with_capacity(config.max_steps);
    let mut validation = Vec::new();
    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    let validate_every = options.validate_every.max(1);

    for step in 0..config.max_steps {
        let slot = step % order.len();
        if slot == 0 {
            order.shuffle(&mut rng);
        }
        let (index, start) = order[slot];
        let (p, s, targets) = train_set[index].window(start, context)?;
        let (loss, grads) = loss_and_gradients(&model, &p, &s, &targets, lambdas)?;
        if !loss.total.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss at step {step}")));
        }
        losses.push(LossRecord { step, loss });
        let step_err = |e: Error| Error::Numeric(format!("step {step}: {e}"));
        adam_step(&mut model.theta_e, &grads.theta_e, &mut adam[0], config.lr).map_err(step_err)?;
        adam_step(&mut model.theta_d, &grads.theta_d, &mut adam[1], config.lr).map_err(step_err)?;
        adam_step(&mut model.theta_p, &grads.theta_p, &mut adam[2], config.lr).map_err(step_err)?;

        let done = step + 1;
        if !val_set.is_empty() && (done % validate_every == 0 || done == config.max_steps) {
            let total = evaluate_loss(&model, val_set, lambdas)?.total;
            validation.push(ValidationRecord { step: done, total });
            if best.as_ref().is_none_or(|b| total < b.1) {
                best = Some((done, total, model.params()));
            }
        }
    }

    let best_step = match best {
        Some((step, _, params)) => {
            model.set_params(&params)?;
            Some(step)
        }
        None => None,
    };
    if let Some(path) = &options.checkpoint {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        save_checkpoint(&model, path)?;
    }
    Ok(TrainReport {
        losses,
        validation,
        best_step,
        model,
        checkpoint: options.checkpoint.clone(),
    })
}
