use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{self, Conv2d, NormCache};
use super::Tensor;
use crate::error::{Error, Result};

/// One layer or block of a network. Composite kinds expand to primitive
/// sequences; the residual block adds its input back to the sequence output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv(Conv2d),
    Glu,
    InstanceNorm {
        channels: usize,
        eps: f64,
    },
    PixelShuffle {
        factor: usize,
    },
    /// conv (c -> 2c) -> norm -> glu -> conv (c -> c) -> norm, plus the input.
    ResidualBlock {
        channels: usize,
        kernel: (usize, usize),
    },
    /// Strided conv to `2 * channels_out` -> norm -> glu.
    Downsample {
        channels_in: usize,
        channels_out: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
    },
    /// conv to `2 * channels_out * factor` -> pixel shuffle along time ->
    /// norm -> glu.
    Upsample {
        channels_in: usize,
        channels_out: usize,
        kernel: (usize, usize),
        factor: usize,
    },
}

/// Activations a layer keeps for its backward pass.
#[derive(Debug, Clone)]
pub enum LayerCache {
    Conv(Tensor),
    Glu(Tensor),
    Norm(NormCache),
    Shuffle,
    Sequence(Vec<LayerCache>),
}

impl LayerSpec {
    pub fn instance_norm(channels: usize) -> Self {
        LayerSpec::InstanceNorm {
            channels,
            eps: ops::DEFAULT_NORM_EPS,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv(_) => "conv",
            LayerSpec::Glu => "glu",
            LayerSpec::InstanceNorm { .. } => "instance_norm",
            LayerSpec::PixelShuffle { .. } => "pixel_shuffle",
            LayerSpec::ResidualBlock { .. } => "residual_block",
            LayerSpec::Downsample { .. } => "downsample",
            LayerSpec::Upsample { .. } => "upsample",
        }
    }

    fn expand(&self) -> Option<Vec<LayerSpec>> {
        match *self {
            LayerSpec::ResidualBlock { channels, kernel } => Some(vec![
                LayerSpec::Conv(Conv2d::same(channels, 2 * channels, kernel)),
                LayerSpec::instance_norm(2 * channels),
                LayerSpec::Glu,
                LayerSpec::Conv(Conv2d::same(channels, channels, kernel)),
                LayerSpec::instance_norm(channels),
            ]),
            LayerSpec::Downsample {
                channels_in,
                channels_out,
                kernel,
                stride,
            } => Some(vec![
                LayerSpec::Conv(Conv2d {
                    stride,
                    ..Conv2d::same(channels_in, 2 * channels_out, kernel)
                }),
                LayerSpec::instance_norm(2 * channels_out),
                LayerSpec::Glu,
            ]),
            LayerSpec::Upsample {
                channels_in,
                channels_out,
                kernel,
                factor,
            } => Some(vec![
                LayerSpec::Conv(Conv2d::same(channels_in, 2 * channels_out * factor, kernel)),
                LayerSpec::PixelShuffle { factor },
                LayerSpec::instance_norm(2 * channels_out),
                LayerSpec::Glu,
            ]),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LayerSpec::Conv(c) => c.validate(),
            LayerSpec::InstanceNorm { channels, eps } => {
                if *channels == 0 || !(*eps > 0.0) {
                    return Err(Error::Config(format!("invalid instance norm {self:?}")));
                }
                Ok(())
            }
            LayerSpec::PixelShuffle { factor } if *factor == 0 => {
                Err(Error::Config("pixel shuffle factor must be >= 1".into()))
            }
            _ => match self.expand() {
                Some(parts) => parts.iter().try_for_each(LayerSpec::validate),
                None => Ok(()),
            },
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            LayerSpec::Conv(c) => c.param_count(),
            LayerSpec::InstanceNorm { channels, .. } => 2 * channels,
            LayerSpec::Glu | LayerSpec::PixelShuffle { .. } => 0,
            _ => self.expand().unwrap().iter().map(LayerSpec::param_count).sum(),
        }
    }

    /// Shapes of the individual parameter tensors, in storage order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match self {
            LayerSpec::Conv(c) => vec![
                vec![c.channels_out, c.channels_in, c.kernel.0, c.kernel.1],
                vec![c.channels_out],
            ],
            LayerSpec::InstanceNorm { channels, .. } => vec![vec![*channels], vec![*channels]],
            LayerSpec::Glu | LayerSpec::PixelShuffle { .. } => Vec::new(),
            _ => self.expand().unwrap().iter().flat_map(LayerSpec::param_shapes).collect(),
        }
    }

    pub fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        match self {
            LayerSpec::Conv(c) => c.output_shape(input),
            LayerSpec::Glu => {
                if input[0] % 2 != 0 {
                    return Err(Error::Shape(format!("gated linear unit given {input:?}")));
                }
                Ok([input[0] / 2, input[1], input[2]])
            }
            LayerSpec::InstanceNorm { channels, .. } => {
                if input[0] != *channels {
                    return Err(Error::Shape(format!(
                        "instance norm over {channels} channels given {input:?}"
                    )));
                }
                Ok(input)
            }
            LayerSpec::PixelShuffle { factor } => {
                if input[0] % factor != 0 {
                    return Err(Error::Shape(format!("pixel shuffle by {factor} given {input:?}")));
                }
                Ok([input[0] / factor, input[1] * factor, input[2]])
            }
            _ => {
                let mut shape = input;
                for part in self.expand().unwrap() {
                    shape = part.output_shape(shape)?;
                }
                if matches!(self, LayerSpec::ResidualBlock { .. }) && shape != input {
                    return Err(Error::Shape(format!(
                        "residual block maps {input:?} to {shape:?}"
                    )));
                }
                Ok(shape)
            }
        }
    }

    /// Seeded initialization: conv weights and biases uniform in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, norm scales 1 and shifts 0.
    pub fn init_params(&self, rng: &mut impl Rng, params: &mut [f64]) {
        match self {
            LayerSpec::Conv(c) => {
                let bound = 1.0 / (c.fan_in() as f64).sqrt();
                params.iter_mut().for_each(|p| *p = rng.gen_range(-bound..bound));
            }
            LayerSpec::InstanceNorm { channels, .. } => {
                params[..*channels].fill(1.0);
                params[*channels..].fill(0.0);
            }
            LayerSpec::Glu | LayerSpec::PixelShuffle { .. } => {}
            _ => {
                let mut offset = 0;
                for part in self.expand().unwrap() {
                    let n = part.param_count();
                    part.init_params(rng, &mut params[offset..offset + n]);
                    offset += n;
                }
            }
        }
    }

    pub fn forward(&self, params: &[f64], x: &Tensor) -> Result<(Tensor, LayerCache)> {
        if params.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "{} needs {} parameters, got {}",
                self.kind(),
                self.param_count(),
                params.len()
            )));
        }
        match self {
            LayerSpec::Conv(c) => Ok((ops::conv2d(x, params, c)?, LayerCache::Conv(x.clone()))),
            LayerSpec::Glu => Ok((ops::glu(x)?, LayerCache::Glu(x.clone()))),
            LayerSpec::InstanceNorm { channels, eps } => {
                let (gamma, beta) = params.split_at(*channels);
                let (y, cache) = ops::instance_norm(x, gamma, beta, *eps)?;
                Ok((y, LayerCache::Norm(cache)))
            }
            LayerSpec::PixelShuffle { factor } => Ok((ops::pixel_shuffle(x, *factor)?, LayerCache::Shuffle)),
            _ => {
                let parts = self.expand().unwrap();
                let mut caches = Vec::with_capacity(parts.len());
                let mut offset = 0;
                let mut y = x.clone();
                for part in &parts {
                    let n = part.param_count();
                    let (next, cache) = part.forward(&params[offset..offset + n], &y)?;
                    caches.push(cache);
                    y = next;
                    offset += n;
                }
                if matches!(self, LayerSpec::ResidualBlock { .. }) {
                    if y.shape() != x.shape() {
                        return Err(Error::Shape(format!(
                            "residual block maps {:?} to {:?}",
                            x.shape(),
                            y.shape()
                        )));
                    }
                    y.add_assign(x);
                }
                Ok((y, LayerCache::Sequence(caches)))
            }
        }
    }

    /// Accumulates parameter gradients into `grad_params` and returns the
    /// gradient with respect to the layer input.
    pub fn backward(&self, params: &[f64], cache: &LayerCache, grad_out: &Tensor, grad_params: &mut [f64]) -> Tensor {
        match (self, cache) {
            (LayerSpec::Conv(c), LayerCache::Conv(x)) => ops::conv2d_backward(x, params, c, grad_out, grad_params),
            (LayerSpec::Glu, LayerCache::Glu(x)) => ops::glu_backward(x, grad_out),
            (LayerSpec::InstanceNorm { channels, .. }, LayerCache::Norm(cache)) => {
                let (gamma, _) = params.split_at(*channels);
                let (g_gamma, g_beta) = grad_params.split_at_mut(*channels);
                ops::instance_norm_backward(cache, gamma, grad_out, g_gamma, g_beta)
            }
            (LayerSpec::PixelShuffle { factor }, LayerCache::Shuffle) => {
                ops::pixel_unshuffle(grad_out, *factor).expect("gradient has the output shape")
            }
            (_, LayerCache::Sequence(caches)) => {
                let parts = self.expand().expect("sequence cache comes from a composite layer");
                let mut offsets = Vec::with_capacity(parts.len());
                let mut offset = 0;
                for part in &parts {
                    offsets.push(offset);
                    offset += part.param_count();
                }
                let mut g = grad_out.clone();
                for ((part, cache), &start) in parts.iter().zip(caches).zip(&offsets).rev() {
                    let n = part.param_count();
                    g = part.backward(
                        &params[start..start + n],
                        cache,
                        &g,
                        &mut grad_params[start..start + n],
                    );
                }
                if matches!(self, LayerSpec::ResidualBlock { .. }) {
                    g.add_assign(grad_out);
                }
                g
            }
            _ => panic!("cache does not belong to a {} layer", self.kind()),
        }
    }
}
