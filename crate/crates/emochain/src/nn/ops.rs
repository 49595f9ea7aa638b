//! Primitive ops and their exact backward passes.

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_NORM_EPS: f64 = 1e-5;

/// Geometry of a 2-D cross-correlation. Weights are laid out
/// `(out, in, kernel_h, kernel_w)`, followed by `out` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2d {
    pub channels_in: usize,
    pub channels_out: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv2d {
    /// Stride 1 with zero padding that keeps odd-sized inputs' extent.
    pub fn same(channels_in: usize, channels_out: usize, kernel: (usize, usize)) -> Self {
        Self {
            channels_in,
            channels_out,
            kernel,
            stride: (1, 1),
            padding: (kernel.0 / 2, kernel.1 / 2),
        }
    }

    pub fn weight_len(&self) -> usize {
        self.channels_out * self.channels_in * self.kernel.0 * self.kernel.1
    }

    pub fn param_count(&self) -> usize {
        self.weight_len() + self.channels_out
    }

    pub fn fan_in(&self) -> usize {
        self.channels_in * self.kernel.0 * self.kernel.1
    }

    pub fn validate(&self) -> Result<()> {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 || self.channels_in == 0 || self.channels_out == 0 {
            return Err(Error::Config(format!("invalid convolution {self:?}")));
        }
        Ok(())
    }

    pub fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let [c, h, w] = input;
        let (kh, kw) = self.kernel;
        let (ph, pw) = self.padding;
        if c != self.channels_in || h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(Error::Shape(format!(
                "convolution expecting {} channels and kernel {:?} cannot take input {input:?}",
                self.channels_in, self.kernel
            )));
        }
        Ok([
            self.channels_out,
            (h + 2 * ph - kh) / self.stride.0 + 1,
            (w + 2 * pw - kw) / self.stride.1 + 1,
        ])
    }

    fn split<'a>(&self, params: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        params.split_at(self.weight_len())
    }
}

/// Output positions `o` whose input index `o * stride + k - pad` is in `[0, n)`.
fn valid_range(n: usize, out: usize, k: usize, pad: usize, stride: usize) -> (usize, usize) {
    let shift = k as isize - pad as isize;
    let lo = if shift >= 0 { 0 } else { ((-shift) as usize).div_ceil(stride) };
    let last = n as isize - 1 - shift;
    let hi = if last < 0 { 0 } else { (last as usize / stride + 1).min(out) };
    (lo.min(hi), hi)
}

/// Unfolds `x` into a `(in * kernel_h * kernel_w, out_h * out_w)` matrix
/// whose column `n` holds the input patch under output position `n`.
fn im2col(x: &Tensor, g: &Conv2d, out_hw: (usize, usize)) -> Vec<f64> {
    let [_, h, w] = x.shape();
    let (oh, ow) = out_hw;
    let (kh_n, kw_n) = g.kernel;
    let (sh, sw) = g.stride;
    let (ph, pw) = g.padding;
    let n = oh * ow;
    let xd = x.data();
    let mut cols = vec![0.0; g.fan_in() * n];
    for ci in 0..g.channels_in {
        let x_c = &xd[ci * h * w..(ci + 1) * h * w];
        for kh in 0..kh_n {
            let (y0, y1) = valid_range(h, oh, kh, ph, sh);
            for kw in 0..kw_n {
                let (x0, x1) = valid_range(w, ow, kw, pw, sw);
                let row = &mut cols[((ci * kh_n + kh) * kw_n + kw) * n..][..n];
                for oy in y0..y1 {
                    let in_row = &x_c[(oy * sh + kh - ph) * w..][..w];
                    let out_row = &mut row[oy * ow..(oy + 1) * ow];
                    for ox in x0..x1 {
                        out_row[ox] = in_row[ox * sw + kw - pw];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: sums patch columns back onto an input of `shape`.
fn col2im(cols: &[f64], g: &Conv2d, shape: [usize; 3], out_hw: (usize, usize)) -> Vec<f64> {
    let [c, h, w] = shape;
    let (oh, ow) = out_hw;
    let (kh_n, kw_n) = g.kernel;
    let (sh, sw) = g.stride;
    let (ph, pw) = g.padding;
    let n = oh * ow;
    let mut gx = vec![0.0; c * h * w];
    for ci in 0..c {
        let gx_c = &mut gx[ci * h * w..(ci + 1) * h * w];
        for kh in 0..kh_n {
            let (y0, y1) = valid_range(h, oh, kh, ph, sh);
            for kw in 0..kw_n {
                let (x0, x1) = valid_range(w, ow, kw, pw, sw);
                let row = &cols[((ci * kh_n + kh) * kw_n + kw) * n..][..n];
                for oy in y0..y1 {
                    let gx_row = &mut gx_c[(oy * sh + kh - ph) * w..][..w];
                    let col_row = &row[oy * ow..(oy + 1) * ow];
                    for ox in x0..x1 {
                        gx_row[ox * sw + kw - pw] += col_row[ox];
                    }
                }
            }
        }
    }
    gx
}

/// Row-major matrix view for [`gemm`]: element `(i, j)` sits at
/// `data[i * row_stride + j * col_stride]`.
#[derive(Clone, Copy)]
struct View<'a> {
    data: &'a [f64],
    row_stride: usize,
    col_stride: usize,
}

impl<'a> View<'a> {
    fn new(data: &'a [f64], cols: usize) -> Self {
        Self { data, row_stride: cols, col_stride: 1 }
    }

    fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self { data, row_stride: 1, col_stride: cols }
    }
}

/// `c (m x n) += a (m x k) * b (k x n)`, with `c` dense row-major.
fn gemm(m: usize, k: usize, n: usize, a: View<'_>, b: View<'_>, c: &mut [f64]) {
    let reach = |v: &View<'_>, rows: usize, cols: usize| {
        rows == 0 || cols == 0 || (rows - 1) * v.row_stride + (cols - 1) * v.col_stride < v.data.len()
    };
    assert!(reach(&a, m, k) && reach(&b, k, n) && c.len() >= m * n, "gemm operands out of range");
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: the assertion above keeps every strided access inside the
    // slices, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Cross-correlation of `x` with the weights and biases in `params`.
pub fn conv2d(x: &Tensor, params: &[f64], geometry: &Conv2d) -> Result<Tensor> {
    let out_shape = geometry.output_shape(x.shape())?;
    if params.len() != geometry.param_count() {
        return Err(Error::Shape(format!(
            "convolution needs {} parameters, got {}",
            geometry.param_count(),
            params.len()
        )));
    }
    let (weight, bias) = geometry.split(params);
    let [co_n, oh, ow] = out_shape;
    let n = oh * ow;
    let k = geometry.fan_in();
    let cols = im2col(x, geometry, (oh, ow));
    let mut out = vec![0.0; co_n * n];
    for (out_c, b) in out.chunks_mut(n).zip(bias) {
        out_c.fill(*b);
    }
    gemm(co_n, k, n, View::new(weight, k), View::new(&cols, n), &mut out);
    Ok(Tensor::raw(out_shape, out))
}

/// Backward pass of [`conv2d`]. Accumulates weight and bias gradients into
/// `grad_params` and returns the input gradient.
pub fn conv2d_backward(
    x: &Tensor,
    params: &[f64],
    geometry: &Conv2d,
    grad_out: &Tensor,
    grad_params: &mut [f64],
) -> Tensor {
    let (weight, _) = geometry.split(params);
    let (grad_w, grad_b) = grad_params.split_at_mut(geometry.weight_len());
    let [co_n, oh, ow] = grad_out.shape();
    let n = oh * ow;
    let k = geometry.fan_in();
    let god = grad_out.data();
    for (gb, go_c) in grad_b.iter_mut().zip(god.chunks(n)) {
        *gb += go_c.iter().sum::<f64>();
    }
    let cols = im2col(x, geometry, (oh, ow));
    gemm(co_n, n, k, View::new(god, n), View::transposed(&cols, n), grad_w);
    let mut grad_cols = vec![0.0; k * n];
    gemm(k, co_n, n, View::transposed(weight, k), View::new(god, n), &mut grad_cols);
    Tensor::raw(x.shape(), col2im(&grad_cols, geometry, x.shape(), (oh, ow)))
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn glu_halves(x: &Tensor) -> Result<usize> {
    if x.channels() % 2 != 0 {
        return Err(Error::Shape(format!(
            "gated linear unit needs an even channel count, got {:?}",
            x.shape()
        )));
    }
    Ok(x.len() / 2)
}

/// Gated linear unit: first channel half times the sigmoid of the second.
pub fn glu(x: &Tensor) -> Result<Tensor> {
    let half = glu_halves(x)?;
    let (a, b) = x.data().split_at(half);
    let data = a.iter().zip(b).map(|(a, b)| a * sigmoid(*b)).collect();
    let [c, h, w] = x.shape();
    Ok(Tensor::raw([c / 2, h, w], data))
}

pub fn glu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let half = x.len() / 2;
    let (a, b) = x.data().split_at(half);
    let mut gx = vec![0.0; x.len()];
    let (ga, gb) = gx.split_at_mut(half);
    for i in 0..half {
        let s = sigmoid(b[i]);
        let g = grad_out.data()[i];
        ga[i] = g * s;
        gb[i] = g * a[i] * s * (1.0 - s);
    }
    Tensor::raw(x.shape(), gx)
}

/// Values kept by [`instance_norm`] for its backward pass.
#[derive(Debug, Clone)]
pub struct NormCache {
    normalized: Tensor,
    inv_std: Vec<f64>,
}

impl NormCache {
    /// Pre-affine output.
    pub fn normalized(&self) -> &Tensor {
        &self.normalized
    }
}

/// Per-channel standardization over the spatial extent of one instance,
/// followed by the affine map `gamma * x_hat + beta`.
pub fn instance_norm(x: &Tensor, gamma: &[f64], beta: &[f64], eps: f64) -> Result<(Tensor, NormCache)> {
    let c = x.channels();
    if gamma.len() != c || beta.len() != c {
        return Err(Error::Shape(format!(
            "instance norm over {c} channels given {} scales and {} shifts",
            gamma.len(),
            beta.len()
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::Config(format!("instance norm eps must be > 0, got {eps}")));
    }
    let n = x.height() * x.width();
    let mut normalized = Vec::with_capacity(x.len());
    let mut out = Vec::with_capacity(x.len());
    let mut inv_std = Vec::with_capacity(c);
    for ch in 0..c {
        let values = x.channel(ch);
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std.push(inv);
        for v in values {
            let z = (v - mean) * inv;
            normalized.push(z);
            out.push(gamma[ch] * z + beta[ch]);
        }
    }
    Ok((
        Tensor::raw(x.shape(), out),
        NormCache {
            normalized: Tensor::raw(x.shape(), normalized),
            inv_std,
        },
    ))
}

/// Backward pass of [`instance_norm`]; accumulates into `grad_gamma` and
/// `grad_beta` and returns the input gradient.
pub fn instance_norm_backward(
    cache: &NormCache,
    gamma: &[f64],
    grad_out: &Tensor,
    grad_gamma: &mut [f64],
    grad_beta: &mut [f64],
) -> Tensor {
    let shape = grad_out.shape();
    let n = shape[1] * shape[2];
    let mut gx = Vec::with_capacity(grad_out.len());
    for ch in 0..shape[0] {
        let z = cache.normalized.channel(ch);
        let g = grad_out.channel(ch);
        let sum_g: f64 = g.iter().sum();
        let sum_gz: f64 = g.iter().zip(z).map(|(g, z)| g * z).sum();
        grad_gamma[ch] += sum_gz;
        grad_beta[ch] += sum_g;
        let scale = gamma[ch] * cache.inv_std[ch] / n as f64;
        for (gi, zi) in g.iter().zip(z) {
            gx.push(scale * (n as f64 * gi - sum_g - zi * sum_gz));
        }
    }
    Tensor::raw(shape, gx)
}

/// `(C * r, T, W) -> (C, T * r, W)` with `out[c, r t + k, w] = in[c r + k, t, w]`.
pub fn pixel_shuffle(x: &Tensor, factor: usize) -> Result<Tensor> {
    let [c, h, w] = x.shape();
    if factor == 0 || c % factor != 0 {
        return Err(Error::Shape(format!(
            "pixel shuffle by {factor} needs channels divisible by it, got {:?}",
            x.shape()
        )));
    }
    let out_c = c / factor;
    let mut out = vec![0.0; x.len()];
    for oc in 0..out_c {
        for k in 0..factor {
            let src = x.channel(oc * factor + k);
            for t in 0..h {
                let dst = (oc * h * factor + t * factor + k) * w;
                out[dst..dst + w].copy_from_slice(&src[t * w..(t + 1) * w]);
            }
        }
    }
    Ok(Tensor::raw([out_c, h * factor, w], out))
}

/// Inverse of [`pixel_shuffle`]: `(C, T * r, W) -> (C * r, T, W)`.
pub fn pixel_unshuffle(x: &Tensor, factor: usize) -> Result<Tensor> {
    let [c, h, w] = x.shape();
    if factor == 0 || h % factor != 0 {
        return Err(Error::Shape(format!(
            "pixel unshuffle by {factor} needs height divisible by it, got {:?}",
            x.shape()
        )));
    }
    let t_n = h / factor;
    let mut out = vec![0.0; x.len()];
    for ic in 0..c {
        let src = x.channel(ic);
        for k in 0..factor {
            for t in 0..t_n {
                let dst = (((ic * factor + k) * t_n) + t) * w;
                let s = (t * factor + k) * w;
                out[dst..dst + w].copy_from_slice(&src[s..s + w]);
            }
        }
    }
    Ok(Tensor::raw([c * factor, t_n, w], out))
}

/// Mean absolute error and its gradient with respect to `pred`.
pub fn l1_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} against target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (p, t) in pred.data().iter().zip(target.data()) {
        let d = p - t;
        total += d.abs();
        grad.push(if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        });
    }
    Ok((total / n, Tensor::raw(pred.shape(), grad)))
}
