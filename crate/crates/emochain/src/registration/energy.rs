use super::kernel::Dynamics;
use super::shoot::{adjoint, integrate};
use super::{check_pair, KernelMode, RegistrationConfig};
use crate::error::{Error, Result};
use crate::features::{F0Contour, Momenta};
use crate::linalg::{dot, Cholesky, SquareMatrix};

/// Registration energy of `m0`: kinetic term plus weighted endpoint error.
pub fn energy(m0: &Momenta, p_a: &F0Contour, p_b: &F0Contour, config: &RegistrationConfig) -> Result<f64> {
    check_pair(p_a, p_b, Some(m0))?;
    config.validate()?;
    let problem = Problem::new(p_a.values(), p_b.values(), config);
    Ok(problem.evaluate(m0.values(), false)?.energy)
}

/// Exact gradient of [`energy`] with respect to `m0` for the discretized flow.
pub fn energy_gradient(
    m0: &Momenta,
    p_a: &F0Contour,
    p_b: &F0Contour,
    config: &RegistrationConfig,
) -> Result<Vec<f64>> {
    check_pair(p_a, p_b, Some(m0))?;
    config.validate()?;
    let problem = Problem::new(p_a.values(), p_b.values(), config);
    Ok(problem.evaluate(m0.values(), true)?.gradient)
}

/// One evaluation of the registration objective.
#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    pub momenta: Vec<f64>,
    pub energy: f64,
    pub endpoint: Vec<f64>,
    /// Euclidean gradient (empty when not requested).
    pub gradient: Vec<f64>,
    /// `m0 + 2 lambda (q(1) - p_B)`: the gradient in the kernel metric,
    /// `K(p_A)^{-1} grad`, for the time-only kernel.
    pub metric_gradient: Vec<f64>,
}

pub(crate) struct Problem<'a> {
    pub dynamics: Dynamics,
    pub p_a: &'a [f64],
    pub p_b: &'a [f64],
    pub lambda: f64,
    pub steps: usize,
    /// `K(p_A)` including jitter.
    pub gram0: SquareMatrix,
    /// Factor of `K(p_A) + eps I`, the time-value preconditioner.
    shifted: Option<Cholesky>,
}

/// Diagonal shift of the time-value preconditioner, relative to unit kernel height.
const PRECONDITIONER_SHIFT: f64 = 1e-3;

impl<'a> Problem<'a> {
    pub fn new(p_a: &'a [f64], p_b: &'a [f64], config: &RegistrationConfig) -> Self {
        let dynamics = Dynamics::new(config.kernel, p_a.len());
        let gram0 = dynamics.gram(p_a);
        let shifted = match dynamics.mode() {
            KernelMode::TimeOnly => None,
            KernelMode::TimeValue => {
                let shifted = SquareMatrix::from_fn(gram0.dim(), |i, j| {
                    gram0.get(i, j) + if i == j { PRECONDITIONER_SHIFT } else { 0.0 }
                });
                Cholesky::factor(&shifted).ok()
            }
        };
        Self {
            dynamics,
            p_a,
            p_b,
            lambda: config.lambda,
            steps: config.steps,
            gram0,
            shifted,
        }
    }

    /// Applies the time-value preconditioner; identity without one.
    pub fn precondition_vec(&self, v: &[f64]) -> Vec<f64> {
        match &self.shifted {
            Some(c) => c.solve(v),
            None => v.to_vec(),
        }
    }

    pub fn evaluate(&self, m0: &[f64], with_gradient: bool) -> Result<Evaluation> {
        // Time-only flow is linear, q(1) = p_A + K m0; every RK4 stage is
        // the same vector, so integrating would reproduce this exactly.
        let states = match self.dynamics.mode() {
            KernelMode::TimeOnly => None,
            KernelMode::TimeValue => Some(integrate(&self.dynamics, self.p_a, m0, self.steps)?),
        };
        let endpoint = match &states {
            Some(s) => s.0.last().unwrap().clone(),
            None => {
                let endpoint: Vec<f64> = self.gram0.mul_vec(m0).iter().zip(self.p_a).map(|(g, p)| p + g).collect();
                if endpoint.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric("non-finite endpoint".into()));
                }
                endpoint
            }
        };
        let residual: Vec<f64> = endpoint.iter().zip(self.p_b).map(|(q, p)| q - p).collect();
        let kinetic = 0.5 * self.gram0.quad_form(m0);
        let energy = kinetic + self.lambda * dot(&residual, &residual);
        let metric_gradient: Vec<f64> = m0
            .iter()
            .zip(&residual)
            .map(|(m, r)| m + 2.0 * self.lambda * r)
            .collect();
        let gradient = if !with_gradient {
            Vec::new()
        } else {
            match self.dynamics.mode() {
                KernelMode::TimeOnly => self.gram0.mul_vec(&metric_gradient),
                KernelMode::TimeValue => {
                    let aq: Vec<f64> = residual.iter().map(|r| 2.0 * self.lambda * r).collect();
                    let am = vec![0.0; m0.len()];
                    let states = states.as_ref().expect("time-value states are integrated");
                    let (_, am0) = adjoint(&self.dynamics, states, aq, am);
                    self.gram0
                        .mul_vec(m0)
                        .iter()
                        .zip(&am0)
                        .map(|(k, a)| k + a)
                        .collect()
                }
            }
        };
        Ok(Evaluation {
            momenta: m0.to_vec(),
            energy,
            endpoint,
            gradient,
            metric_gradient,
        })
    }

    /// Exact minimizer of the energy along `direction` when the energy is
    /// quadratic (time-only kernel); `None` otherwise.
    pub fn exact_step(&self, slope: f64, direction: &[f64]) -> Option<f64> {
        if self.dynamics.mode() != KernelMode::TimeOnly {
            return None;
        }
        let gd = self.gram0.mul_vec(direction);
        let curvature = dot(direction, &gd) + 2.0 * self.lambda * dot(&gd, &gd);
        let alpha = -slope / curvature;
        (alpha.is_finite() && alpha > 0.0).then_some(alpha)
    }

    /// `Gamma(m + alpha d) - Gamma(m)`, expanded in differences instead of
    /// subtracting two large, nearly equal energies. The kinetic term only
    /// involves `K(p_A)`, so its change is exact in both modes; time-only
    /// energy is quadratic, so the whole change is closed form there.
    pub fn energy_change(
        &self,
        current: &Evaluation,
        candidate: &Evaluation,
        direction: &[f64],
        alpha: f64,
    ) -> f64 {
        let gd = self.gram0.mul_vec(direction);
        match self.dynamics.mode() {
            KernelMode::TimeOnly => {
                let curvature = dot(direction, &gd) + 2.0 * self.lambda * dot(&gd, &gd);
                alpha * dot(&current.gradient, direction) + 0.5 * alpha * alpha * curvature
            }
            KernelMode::TimeValue => {
                let kinetic = alpha * dot(&gd, &current.momenta) + 0.5 * alpha * alpha * dot(direction, &gd);
                let data: f64 = current
                    .endpoint
                    .iter()
                    .zip(&candidate.endpoint)
                    .zip(self.p_b)
                    .map(|((q, q_new), p)| {
                        let delta = q_new - q;
                        delta * (delta + 2.0 * (q - p))
                    })
                    .sum();
                kinetic + self.lambda * data
            }
        }
    }
}
