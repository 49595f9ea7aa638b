use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layer::{LayerCache, LayerSpec};
use super::ops::{self, Conv2d};
use super::Tensor;
use crate::error::{Error, Result};

/// A feed-forward stack of layers over a fixed input shape.
///
/// `input_skip` adds a learned linear map of the raw network input to the
/// stack output. Instance normalization discards each channel's level, so
/// without it a network cannot carry an absolute pitch through to its output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub input_skip: Option<Conv2d>,
}

#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    offsets: Vec<usize>,
    output_shape: [usize; 3],
    param_count: usize,
}

#[derive(Debug, Clone)]
pub struct NetworkCache {
    layers: Vec<LayerCache>,
    input: Tensor,
}

impl Network {
    /// Validates every layer and the shape flow through the stack.
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        let mut shape = spec.input_shape;
        let mut offsets = Vec::with_capacity(spec.layers.len());
        let mut offset = 0;
        for layer in &spec.layers {
            layer.validate()?;
            shape = layer.output_shape(shape)?;
            offsets.push(offset);
            offset += layer.param_count();
        }
        if let Some(skip) = &spec.input_skip {
            skip.validate()?;
            let skip_shape = skip.output_shape(spec.input_shape)?;
            if skip_shape != shape {
                return Err(Error::Shape(format!(
                    "input skip produces {skip_shape:?}, stack produces {shape:?}"
                )));
            }
            offset += skip.param_count();
        }
        Ok(Self {
            spec,
            offsets,
            output_shape: shape,
            param_count: offset,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.spec.input_shape
    }

    pub fn output_shape(&self) -> [usize; 3] {
        self.output_shape
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn count_layers(&self, kind: &str) -> usize {
        self.spec.layers.iter().filter(|l| l.kind() == kind).count()
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes: Vec<Vec<usize>> = self.spec.layers.iter().flat_map(LayerSpec::param_shapes).collect();
        if let Some(skip) = &self.spec.input_skip {
            shapes.extend(LayerSpec::Conv(*skip).param_shapes());
        }
        shapes
    }

    pub fn init_params(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut params = vec![0.0; self.param_count];
        for (layer, &start) in self.spec.layers.iter().zip(&self.offsets) {
            layer.init_params(rng, &mut params[start..start + layer.param_count()]);
        }
        if let Some(skip) = &self.spec.input_skip {
            let start = self.param_count - skip.param_count();
            LayerSpec::Conv(*skip).init_params(rng, &mut params[start..]);
        }
        params
    }

    /// The input-skip slice of `params`: weights in (out, in, kh, kw)
    /// order, then the bias.
    pub fn input_skip_params<'p>(&self, params: &'p mut [f64]) -> Option<&'p mut [f64]> {
        let skip = self.spec.input_skip.as_ref()?;
        let start = self.param_count - skip.param_count();
        params.get_mut(start..self.param_count)
    }

    fn check(&self, params: &[f64], x: &Tensor) -> Result<()> {
        if x.shape() != self.spec.input_shape {
            return Err(Error::Shape(format!(
                "network expects input {:?}, got {:?}",
                self.spec.input_shape,
                x.shape()
            )));
        }
        if params.len() != self.param_count {
            return Err(Error::Shape(format!(
                "network has {} parameters, got {}",
                self.param_count,
                params.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, params: &[f64], x: &Tensor) -> Result<(Tensor, NetworkCache)> {
        self.check(params, x)?;
        let mut caches = Vec::with_capacity(self.spec.layers.len());
        let mut y = x.clone();
        for (layer, &start) in self.spec.layers.iter().zip(&self.offsets) {
            let (next, cache) = layer.forward(&params[start..start + layer.param_count()], &y)?;
            caches.push(cache);
            y = next;
        }
        if let Some(skip) = &self.spec.input_skip {
            let start = self.param_count - skip.param_count();
            y.add_assign(&ops::conv2d(x, &params[start..], skip)?);
        }
        Ok((
            y,
            NetworkCache {
                layers: caches,
                input: x.clone(),
            },
        ))
    }

    /// Output only, without keeping activations.
    pub fn predict(&self, params: &[f64], x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(params, x)?.0)
    }

    /// Accumulates parameter gradients into `grad_params` and returns the
    /// input gradient.
    pub fn backward(&self, params: &[f64], cache: &NetworkCache, grad_out: &Tensor, grad_params: &mut [f64]) -> Tensor {
        let mut g = grad_out.clone();
        for ((layer, &start), layer_cache) in self.spec.layers.iter().zip(&self.offsets).zip(&cache.layers).rev() {
            let n = layer.param_count();
            g = layer.backward(&params[start..start + n], layer_cache, &g, &mut grad_params[start..start + n]);
        }
        if let Some(skip) = &self.spec.input_skip {
            let start = self.param_count - skip.param_count();
            let gx = ops::conv2d_backward(&cache.input, &params[start..], skip, grad_out, &mut grad_params[start..]);
            g.add_assign(&gx);
        }
        g
    }
}
