use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layer::LayerSpec;
use super::Tensor;
use crate::error::Result;

pub const DEFAULT_GRAD_TOL: f64 = 1e-5;
/// Above this many entries a seeded subsample is checked.
pub const MAX_CHECKED: usize = 10_000;
/// Denominator floor of the relative error; keeps entries whose true
/// gradient is near zero from reporting pure rounding noise.
pub const GRAD_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradIndex {
    Param(usize),
    Input(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub passed: bool,
    pub worst_error: f64,
    pub worst_index: Option<GradIndex>,
    pub checked: usize,
    pub tol: f64,
}

/// `|a - n| / max(|a|, |n|, GRAD_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Central difference of `f` along coordinate `i` with step
/// `1e-5 * max(1, |x_i|)`.
pub fn central_difference(f: &mut impl FnMut(&[f64]) -> f64, x: &mut [f64], i: usize) -> f64 {
    let orig = x[i];
    let h = 1e-5 * orig.abs().max(1.0);
    x[i] = orig + h;
    let up = f(x);
    x[i] = orig - h;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * h)
}

/// Indices to check out of `n`: all of them, or a seeded sorted subsample of
/// `limit`.
pub fn check_indices(n: usize, limit: usize, seed: u64) -> Vec<usize> {
    if n <= limit {
        return (0..n).collect();
    }
    let mut idx = sample(&mut ChaCha8Rng::seed_from_u64(seed), n, limit).into_vec();
    idx.sort_unstable();
    idx
}

/// Compares `analytic` against central differences of `f` at `point` on
/// `indices`. Returns the worst relative error and where it occurred.
pub fn compare_gradients(
    mut f: impl FnMut(&[f64]) -> f64,
    point: &[f64],
    analytic: &[f64],
    indices: &[usize],
) -> (f64, Option<usize>) {
    let mut x = point.to_vec();
    let mut worst = (0.0, None);
    for &i in indices {
        let numeric = central_difference(&mut f, &mut x, i);
        let err = relative_error(analytic[i], numeric);
        if err > worst.0 || worst.1.is_none() {
            worst = (err, Some(i));
        }
    }
    worst
}

/// Checks a layer's backward pass against finite differences of the scalar
/// `sum(r * layer(x))` for a seeded random projection `r`, over every
/// parameter and input entry (or a seeded subsample above [`MAX_CHECKED`]).
pub fn gradient_check(layer: &LayerSpec, params: &[f64], input: &Tensor, tol: f64, seed: u64) -> Result<GradCheckReport> {
    let (out, cache) = layer.forward(params, input)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let projection: Vec<f64> = (0..out.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let grad_out = Tensor::raw(out.shape(), projection.clone());
    let mut grad_params = vec![0.0; params.len()];
    let grad_input = layer.backward(params, &cache, &grad_out, &mut grad_params);

    let np = params.len();
    let point: Vec<f64> = params.iter().chain(input.data()).copied().collect();
    let analytic: Vec<f64> = grad_params.iter().chain(grad_input.data()).copied().collect();
    let shape = input.shape();
    let objective = |v: &[f64]| -> f64 {
        let x = Tensor::raw(shape, v[np..].to_vec());
        let (y, _) = layer.forward(&v[..np], &x).expect("shapes already checked");
        y.data().iter().zip(&projection).map(|(a, b)| a * b).sum()
    };
    let indices = check_indices(point.len(), MAX_CHECKED, seed ^ 0x5eed);
    let (worst_error, at) = compare_gradients(objective, &point, &analytic, &indices);
    Ok(GradCheckReport {
        passed: worst_error <= tol,
        worst_error,
        worst_index: at.map(|i| if i < np { GradIndex::Param(i) } else { GradIndex::Input(i - np) }),
        checked: indices.len(),
        tol,
    })
}

/// Result of one randomized layer instance in [`run_layer_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub kind: &'static str,
    pub instance: usize,
    pub input_shape: [usize; 3],
    pub report: GradCheckReport,
}

/// Layer kinds covered by [`run_layer_suite`].
pub const SUITE_KINDS: [&str; 7] = [
    "conv",
    "glu",
    "instance_norm",
    "pixel_shuffle",
    "residual_block",
    "downsample",
    "upsample",
];

/// Random layer of `kind` with an input shape it accepts.
pub fn random_layer(kind: &str, rng: &mut impl Rng) -> (LayerSpec, [usize; 3]) {
    use super::ops::Conv2d;
    let odd = |rng: &mut dyn rand::RngCore, max: usize| 2 * rng.gen_range(0..=max / 2) + 1;
    let c = rng.gen_range(1..=3);
    let h = 2 * rng.gen_range(2..=5);
    let w = rng.gen_range(1..=4);
    match kind {
        "conv" => {
            let kernel = (rng.gen_range(1..=4), rng.gen_range(1..=3));
            let geometry = Conv2d {
                channels_in: c,
                channels_out: rng.gen_range(1..=3),
                kernel,
                stride: (rng.gen_range(1..=2), rng.gen_range(1..=2)),
                padding: (rng.gen_range(0..=kernel.0 / 2), rng.gen_range(0..=kernel.1 / 2)),
            };
            let w = w.max(kernel.1);
            (LayerSpec::Conv(geometry), [c, h, w])
        }
        "glu" => (LayerSpec::Glu, [2 * c, h, w]),
        "instance_norm" => (LayerSpec::instance_norm(c), [c, h, w.max(2)]),
        "pixel_shuffle" => {
            let factor = rng.gen_range(1..=3);
            (LayerSpec::PixelShuffle { factor }, [c * factor, h, w])
        }
        "residual_block" => (
            LayerSpec::ResidualBlock {
                channels: c,
                kernel: (odd(rng, 3), odd(rng, 3)),
            },
            [c, h, w.max(2)],
        ),
        "downsample" => (
            LayerSpec::Downsample {
                channels_in: c,
                channels_out: rng.gen_range(1..=3),
                kernel: (odd(rng, 5), odd(rng, 3)),
                stride: (2, 1),
            },
            [c, h, w.max(2)],
        ),
        "upsample" => (
            LayerSpec::Upsample {
                channels_in: c,
                channels_out: rng.gen_range(1..=2),
                kernel: (odd(rng, 5), odd(rng, 3)),
                factor: 2,
            },
            [c, h / 2, w.max(2)],
        ),
        other => panic!("unknown layer kind {other}"),
    }
}

/// Gradient checks `instances` seeded random instances of every layer kind.
/// Parameters and inputs are drawn uniformly from `[-1, 1]` and `[-2, 2]`.
pub fn run_layer_suite(instances: usize, tol: f64, seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut entries = Vec::with_capacity(instances * SUITE_KINDS.len());
    for (k, kind) in SUITE_KINDS.iter().enumerate() {
        for instance in 0..instances {
            let case_seed = crate::seed::derive_seed(seed, kind, instance as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
            let (layer, shape) = random_layer(kind, &mut rng);
            let params: Vec<f64> = (0..layer.param_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let input = Tensor::from_fn(shape, |_, _, _| rng.gen_range(-2.0..2.0));
            let report = gradient_check(&layer, &params, &input, tol, case_seed.wrapping_add(k as u64))?;
            entries.push(SuiteEntry {
                kind,
                instance,
                input_shape: shape,
                report,
            });
        }
    }
    Ok(entries)
}
