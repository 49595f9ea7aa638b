//! The chained encoder-decoder-predictor model.
//!
//! The encoder maps the source pitch and spectrum to momenta, the decoder
//! maps source pitch and predicted momenta to the target pitch, and the
//! predictor maps the source spectrum and predicted pitch to the target
//! spectrum. The chain always runs open loop: each network consumes the
//! prediction of the previous one, never a ground truth value.

mod checkpoint;
mod convert;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{DEFAULT_CONTEXT_FRAMES, DEFAULT_MFCC_DIM};
use crate::nn::{l1_loss, Conv2d, LayerSpec, Network, NetworkCache, NetworkSpec, Tensor, DEFAULT_LEARNING_RATE};
use crate::seed;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use convert::{convert, convert_window};
pub use train::{
    evaluate_loss, load_training_set, train, train_samples, LossRecord, TrainOptions, TrainReport, TrainingSample, ValidationRecord,
    LOSS_HEADER,
};

/// Shape hyperparameters shared by the three networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Channel width after the input layer and after each downsampling
    /// stage; the decoder path mirrors them back.
    pub channels: Vec<usize>,
    /// Residual blocks of the encoder and decoder.
    pub residual_blocks: usize,
    /// Residual blocks of the predictor.
    pub predictor_residual_blocks: usize,
    pub input_kernel: (usize, usize),
    pub down_kernel: (usize, usize),
    pub residual_kernel: (usize, usize),
    pub up_kernel: (usize, usize),
    /// Time extent of the output convolution; its width collapses the input
    /// width onto the output width.
    pub output_kernel_height: usize,
    /// Time extent (odd) of the linear skip from each network's input to
    /// its output; `None` removes the skip.
    pub input_skip: Option<usize>,
}

impl ArchConfig {
    /// Full-size networks: 32, 64 and 128 channels.
    pub fn full() -> Self {
        Self {
            channels: vec![32, 64, 128],
            residual_blocks: 2,
            predictor_residual_blocks: 3,
            input_kernel: (5, 3),
            down_kernel: (5, 3),
            residual_kernel: (3, 3),
            up_kernel: (5, 3),
            output_kernel_height: 5,
            input_skip: Some(1),
        }
    }

    /// Desk-scale variant: same topology, 8 and 16 channels.
    pub fn small() -> Self {
        Self {
            channels: vec![8, 16],
            residual_blocks: 1,
            predictor_residual_blocks: 2,
            ..Self::full()
        }
    }

    /// Smallest variant, for gradient checks and quick experiments.
    pub fn tiny() -> Self {
        Self {
            channels: vec![2, 4],
            residual_blocks: 1,
            predictor_residual_blocks: 2,
            ..Self::full()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "small" => Ok(Self::small()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config(format!("unknown architecture preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Config(format!("invalid channel widths {:?}", self.channels)));
        }
        if self.input_skip.is_some_and(|h| h % 2 == 0) {
            return Err(Error::Config("input skip height must be odd".into()));
        }
        if self.predictor_residual_blocks != self.residual_blocks + 1 {
            return Err(Error::Config(format!(
                "predictor needs exactly one more residual block than the encoder ({} vs {})",
                self.predictor_residual_blocks, self.residual_blocks
            )));
        }
        Ok(())
    }

    /// Time-axis factor the context length must be divisible by.
    pub fn time_divisor(&self) -> usize {
        1 << (self.channels.len() - 1)
    }

    fn network(&self, context: usize, width_in: usize, width_out: usize, residual_blocks: usize) -> Result<Network> {
        if width_out > width_in {
            return Err(Error::Config(format!("output width {width_out} exceeds input width {width_in}")));
        }
        let c = &self.channels;
        let mut layers = vec![LayerSpec::Conv(Conv2d::same(1, 2 * c[0], self.input_kernel)), LayerSpec::Glu];
        for pair in c.windows(2) {
            layers.push(LayerSpec::Downsample {
                channels_in: pair[0],
                channels_out: pair[1],
                kernel: self.down_kernel,
                stride: (2, 1),
            });
        }
        let deepest = *c.last().unwrap();
        for _ in 0..residual_blocks {
            layers.push(LayerSpec::ResidualBlock {
                channels: deepest,
                kernel: self.residual_kernel,
            });
        }
        for pair in c.windows(2).rev() {
            layers.push(LayerSpec::Upsample {
                channels_in: pair[1],
                channels_out: pair[0],
                kernel: self.up_kernel,
                factor: 2,
            });
        }
        let collapse = width_in - width_out + 1;
        layers.push(LayerSpec::Conv(Conv2d {
            channels_in: c[0],
            channels_out: 1,
            kernel: (self.output_kernel_height, collapse),
            stride: (1, 1),
            padding: (self.output_kernel_height / 2, 0),
        }));
        let input_skip = self.input_skip.map(|height| Conv2d {
            channels_in: 1,
            channels_out: 1,
            kernel: (height, collapse),
            stride: (1, 1),
            padding: (height / 2, 0),
        });
        Network::new(NetworkSpec {
            input_shape: [1, context, width_in],
            layers,
            input_skip,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub lambda_e: f64,
    pub lambda_d: f64,
    pub lambda_p: f64,
    pub lr: f64,
    pub max_steps: usize,
    pub seed: u64,
    pub arch: ArchConfig,
    /// `false` trains with the momenta term switched off (ablation).
    pub regularize_momenta: bool,
    /// Window length in frames.
    pub context: usize,
    pub mfcc_dim: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            lambda_e: 0.01,
            lambda_d: 1e-4,
            lambda_p: 1e-4,
            lr: DEFAULT_LEARNING_RATE,
            max_steps: 10_000,
            seed: 0,
            arch: ArchConfig::full(),
            regularize_momenta: true,
            context: DEFAULT_CONTEXT_FRAMES,
            mfcc_dim: DEFAULT_MFCC_DIM,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        for (name, v) in [("lambda_e", self.lambda_e), ("lambda_d", self.lambda_d), ("lambda_p", self.lambda_p)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.context == 0 || self.context % self.arch.time_divisor() != 0 {
            return Err(Error::Config(format!(
                "context {} must be a positive multiple of {}",
                self.context,
                self.arch.time_divisor()
            )));
        }
        if self.mfcc_dim == 0 {
            return Err(Error::Config("mfcc_dim must be >= 1".into()));
        }
        Ok(())
    }

    /// Loss weights in effect: the momenta weight is zero when momenta
    /// regularization is off.
    pub fn lambdas(&self) -> Lambdas {
        Lambdas {
            momenta: if self.regularize_momenta { self.lambda_e } else { 0.0 },
            pitch: self.lambda_d,
            spectrum: self.lambda_p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lambdas {
    pub momenta: f64,
    pub pitch: f64,
    pub spectrum: f64,
}

#[derive(Debug, Clone)]
pub struct ChainModel {
    config: ChainConfig,
    pub(crate) encoder: Network,
    pub(crate) decoder: Network,
    pub(crate) predictor: Network,
    pub theta_e: Vec<f64>,
    pub theta_d: Vec<f64>,
    pub theta_p: Vec<f64>,
}

/// Builds the three networks and draws their parameters from `config.seed`.
pub fn build_chain(config: &ChainConfig) -> Result<ChainModel> {
    let mut model = ChainModel::untrained(config)?;
    model.theta_e = model.encoder.init_params(&mut init_rng(config.seed, "encoder"));
    model.theta_d = model.decoder.init_params(&mut init_rng(config.seed, "decoder"));
    model.theta_p = model.predictor.init_params(&mut init_rng(config.seed, "predictor"));
    // Start from the identity conversion: zero momenta, pitch and spectrum
    // passed through by the skips.
    for (net, params, leading) in [
        (&model.encoder, &mut model.theta_e, 0.0),
        (&model.decoder, &mut model.theta_d, 1.0),
        (&model.predictor, &mut model.theta_p, 1.0),
    ] {
        if let (Some(height), Some(skip)) = (model.config.arch.input_skip, net.input_skip_params(params)) {
            // Centre tap of the leading input column.
            let width = (skip.len() - 1) / height;
            skip.fill(0.0);
            skip[(height / 2) * width] = leading;
        }
    }
    Ok(model)
}

fn init_rng(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed::derive_seed(seed, label, 0))
}

impl ChainModel {
    /// Networks with all-zero parameters.
    pub(crate) fn untrained(config: &ChainConfig) -> Result<Self> {
        config.validate()?;
        let arch = &config.arch;
        let t = config.context;
        let d = config.mfcc_dim;
        let encoder = arch.network(t, d + 1, 1, arch.residual_blocks)?;
        let decoder = arch.network(t, 2, 1, arch.residual_blocks)?;
        let predictor = arch.network(t, d + 1, d, arch.predictor_residual_blocks)?;
        let residual = "residual_block";
        if predictor.count_layers(residual) != encoder.count_layers(residual) + 1
            || decoder.count_layers(residual) != encoder.count_layers(residual)
        {
            return Err(Error::Config("residual block counts violate the chain layout".into()));
        }
        Ok(Self {
            theta_e: vec![0.0; encoder.param_count()],
            theta_d: vec![0.0; decoder.param_count()],
            theta_p: vec![0.0; predictor.param_count()],
            config: config.clone(),
            encoder,
            decoder,
            predictor,
        })
    }

    pub fn config(&self) -> &ChainConfig {
        &self.config
    }

    pub fn encoder(&self) -> &Network {
        &self.encoder
    }

    pub fn decoder(&self) -> &Network {
        &self.decoder
    }

    pub fn predictor(&self) -> &Network {
        &self.predictor
    }

    pub fn param_count(&self) -> usize {
        self.theta_e.len() + self.theta_d.len() + self.theta_p.len()
    }

    /// All parameters, encoder then decoder then predictor.
    pub fn params(&self) -> Vec<f64> {
        [&self.theta_e[..], &self.theta_d, &self.theta_p].concat()
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "chain has {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let (e, rest) = flat.split_at(self.theta_e.len());
        let (d, p) = rest.split_at(self.theta_d.len());
        self.theta_e.copy_from_slice(e);
        self.theta_d.copy_from_slice(d);
        self.theta_p.copy_from_slice(p);
        Ok(())
    }

    pub(crate) fn set_config(&mut self, config: ChainConfig) {
        self.config = config;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub momenta_hat: Tensor,
    pub pitch_hat: Tensor,
    pub spectrum_hat: Tensor,
}

/// Activations of one chained forward pass.
#[derive(Debug, Clone)]
pub struct ChainTape {
    pub output: ChainOutput,
    encoder: NetworkCache,
    decoder: NetworkCache,
    predictor: NetworkCache,
}

/// Open-loop forward pass on one window: `p_a` is `1 x T x 1`, `s_a` is
/// `1 x T x D`.
pub fn forward_chain(model: &ChainModel, p_a: &Tensor, s_a: &Tensor) -> Result<ChainOutput> {
    Ok(forward_tape(model, p_a, s_a)?.output)
}

pub fn forward_tape(model: &ChainModel, p_a: &Tensor, s_a: &Tensor) -> Result<ChainTape> {
    let t = model.config.context;
    let d = model.config.mfcc_dim;
    if p_a.shape() != [1, t, 1] || s_a.shape() != [1, t, d] {
        return Err(Error::Shape(format!(
            "chain expects pitch [1, {t}, 1] and spectrum [1, {t}, {d}], got {:?} and {:?}",
            p_a.shape(),
            s_a.shape()
        )));
    }
    let (momenta_hat, encoder) = model.encoder.forward(&model.theta_e, &p_a.concat_width(s_a)?)?;
    let (pitch_hat, decoder) = model.decoder.forward(&model.theta_d, &p_a.concat_width(&momenta_hat)?)?;
    let (spectrum_hat, predictor) = model.predictor.forward(&model.theta_p, &s_a.concat_width(&pitch_hat)?)?;
    Ok(ChainTape {
        output: ChainOutput {
            momenta_hat,
            pitch_hat,
            spectrum_hat,
        },
        encoder,
        decoder,
        predictor,
    })
}

/// Ground truth of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTargets {
    pub momenta: Tensor,
    pub pitch: Tensor,
    pub spectrum: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub term_momenta: f64,
    pub term_pitch: f64,
    pub term_spectrum: f64,
    pub total: f64,
}

/// Gradients of the loss with respect to the three chain outputs.
#[derive(Debug, Clone)]
pub struct OutputGradients {
    pub momenta: Tensor,
    pub pitch: Tensor,
    pub spectrum: Tensor,
}

/// Weighted sum of the three mean absolute errors.
pub fn unified_loss(out: &ChainOutput, targets: &ChainTargets, lambdas: Lambdas) -> Result<LossBreakdown> {
    Ok(unified_loss_with_grad(out, targets, lambdas)?.0)
}

pub fn unified_loss_with_grad(
    out: &ChainOutput,
    targets: &ChainTargets,
    lambdas: Lambdas,
) -> Result<(LossBreakdown, OutputGradients)> {
    for (name, v) in [("momenta", lambdas.momenta), ("pitch", lambdas.pitch), ("spectrum", lambdas.spectrum)] {
        if !(v >= 0.0) {
            return Err(Error::Config(format!("{name} loss weight must be >= 0, got {v}")));
        }
    }
    let term = |pred: &Tensor, target: &Tensor, lambda: f64| -> Result<(f64, Tensor)> {
        let (mae, mut grad) = l1_loss(pred, target)?;
        grad.data_mut().iter_mut().for_each(|g| *g *= lambda);
        Ok((lambda * mae, grad))
    };
    let (term_momenta, g_m) = term(&out.momenta_hat, &targets.momenta, lambdas.momenta)?;
    let (term_pitch, g_p) = term(&out.pitch_hat, &targets.pitch, lambdas.pitch)?;
    let (term_spectrum, g_s) = term(&out.spectrum_hat, &targets.spectrum, lambdas.spectrum)?;
    Ok((
        LossBreakdown {
            term_momenta,
            term_pitch,
            term_spectrum,
            total: term_momenta + term_pitch + term_spectrum,
        },
        OutputGradients {
            momenta: g_m,
            pitch: g_p,
            spectrum: g_s,
        },
    ))
}

/// Gradients of all three parameter sets, chained through the open-loop
/// composition: the spectrum term reaches the decoder through the predicted
/// pitch and the encoder through the predicted momenta.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainGradients {
    pub theta_e: Vec<f64>,
    pub theta_d: Vec<f64>,
    pub theta_p: Vec<f64>,
}

pub fn backward_chain(model: &ChainModel, tape: &ChainTape, grads: &OutputGradients) -> ChainGradients {
    let d = model.config.mfcc_dim;
    let mut theta_p = vec![0.0; model.theta_p.len()];
    let g_pred_in = model.predictor.backward(&model.theta_p, &tape.predictor, &grads.spectrum, &mut theta_p);
    let (_, g_pitch_from_pred) = g_pred_in.split_width(d).expect("predictor input is spectrum ++ pitch");
    let mut g_pitch = grads.pitch.clone();
    g_pitch.add_assign(&g_pitch_from_pred);

    let mut theta_d = vec![0.0; model.theta_d.len()];
    let g_dec_in = model.decoder.backward(&model.theta_d, &tape.decoder, &g_pitch, &mut theta_d);
    let (_, g_momenta_from_dec) = g_dec_in.split_width(1).expect("decoder input is pitch ++ momenta");
    let mut g_momenta = grads.momenta.clone();
    g_momenta.add_assign(&g_momenta_from_dec);

    let mut theta_e = vec![0.0; model.theta_e.len()];
    model.encoder.backward(&model.theta_e, &tape.encoder, &g_momenta, &mut theta_e);
    ChainGradients {
        theta_e,
        theta_d,
        theta_p,
    }
}

impl ChainGradients {
    pub fn flat(&self) -> Vec<f64> {
        [&self.theta_e[..], &self.theta_d, &self.theta_p].concat()
    }
}

/// Loss and parameter gradients of one window.
pub fn loss_and_gradients(
    model: &ChainModel,
    p_a: &Tensor,
    s_a: &Tensor,
    targets: &ChainTargets,
    lambdas: Lambdas,
) -> Result<(LossBreakdown, ChainGradients)> {
    let tape = forward_tape(model, p_a, s_a)?;
    let (loss, grads) = unified_loss_with_grad(&tape.output, targets, lambdas)?;
    Ok((loss, backward_chain(model, &tape, &grads)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ChainConfig {
        ChainConfig {
            arch: ArchConfig::tiny(),
            context: 16,
            mfcc_dim: 3,
            ..ChainConfig::default()
        }
    }

    fn window(t: usize, d: usize) -> (Tensor, Tensor) {
        let p = Tensor::from_fn([1, t, 1], |_, h, _| 150.0 + 10.0 * (h as f64 / 3.0).sin());
        let s = Tensor::from_fn([1, t, d], |_, h, w| ((h * 7 + w * 3) % 5) as f64 - 2.0);
        (p, s)
    }

    #[test]
    fn output_shapes_and_residual_counts() {
        let model = build_chain(&ChainConfig::default()).unwrap();
        assert_eq!(model.encoder().output_shape(), [1, 128, 1]);
        assert_eq!(model.decoder().input_shape(), [1, 128, 2]);
        assert_eq!(model.predictor().output_shape(), [1, 128, 23]);
        assert_eq!(
            model.predictor().count_layers("residual_block"),
            model.encoder().count_layers("residual_block") + 1
        );
        let mut bad = ChainConfig::default();
        bad.arch.predictor_residual_blocks = bad.arch.residual_blocks;
        assert!(matches!(build_chain(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn construction_and_forward_are_deterministic() {
        let a = build_chain(&tiny_config()).unwrap();
        let b = build_chain(&tiny_config()).unwrap();
        assert_eq!(a.params(), b.params());
        let (p, s) = window(16, 3);
        let out = forward_chain(&a, &p, &s).unwrap();
        assert_eq!(out, forward_chain(&a, &p, &s).unwrap());
        assert_eq!(out.spectrum_hat.shape(), [1, 16, 3]);
    }

    #[test]
    fn perfect_prediction_and_unit_momenta_residual() {
        let model = build_chain(&tiny_config()).unwrap();
        let (p, s) = window(16, 3);
        let out = forward_chain(&model, &p, &s).unwrap();
        let lambdas = tiny_config().lambdas();
        let exact = ChainTargets {
            momenta: out.momenta_hat.clone(),
            pitch: out.pitch_hat.clone(),
            spectrum: out.spectrum_hat.clone(),
        };
        assert_eq!(unified_loss(&out, &exact, lambdas).unwrap().total, 0.0);
        let shifted = ChainTargets {
            momenta: Tensor::new([1, 16, 1], out.momenta_hat.data().iter().map(|v| v + 1.0).collect()).unwrap(),
            ..exact
        };
        let loss = unified_loss(&out, &shifted, lambdas).unwrap();
        assert!((loss.total - 0.01).abs() < 1e-15);
    }

    #[test]
    fn spectrum_term_reaches_the_encoder() {
        let model = build_chain(&tiny_config()).unwrap();
        let (p, s) = window(16, 3);
        let out = forward_chain(&model, &p, &s).unwrap();
        let targets = ChainTargets {
            momenta: out.momenta_hat.clone(),
            pitch: out.pitch_hat.clone(),
            spectrum: Tensor::zeros([1, 16, 3]),
        };
        let lambdas = Lambdas {
            momenta: 0.0,
            pitch: 0.0,
            spectrum: 1e-4,
        };
        let (_, grads) = loss_and_gradients(&model, &p, &s, &targets, lambdas).unwrap();
        assert!(grads.theta_e.iter().any(|g| *g != 0.0));
    }
}
