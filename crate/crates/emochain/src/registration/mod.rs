//! LDDMM registration of F0 contour pairs through initial momenta.
//!
//! A contour of `T` frames is treated as `T` landmarks that move only along
//! the frequency axis. A deformation is the geodesic flow of the Hamiltonian
//! `H(q, m) = 1/2 m^T K(q) m`, started from the source contour with initial
//! momenta `m0`. Registration minimizes
//!
//! ```text
//! Gamma(m0) = 1/2 m0^T K(p_A) m0 + lambda * sum_t (q_t(1) - p_B[t])^2
//! ```
//!
//! over `m0`. With the time-only kernel the flow is a straight line,
//! `q(1) = p_A + G m0`, and the minimizer has a closed form.

mod batch;
mod closed_form;
mod energy;
mod kernel;
mod shoot;
mod solver;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{F0Contour, Momenta};

pub use batch::{batch_generate_momenta, BatchOptions, BatchReport, PairReport, PairStatus};
pub use closed_form::solve_momenta_closed_form;
pub use energy::{energy, energy_gradient};
pub use kernel::gram_matrix;
pub use shoot::shoot;
pub use solver::register;

/// How the kernel between two landmarks is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelMode {
    /// Gaussian over frame indices only; the flow has constant velocity.
    TimeOnly,
    /// Gaussian over frame index and contour value.
    TimeValue,
}

impl std::str::FromStr for KernelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time" | "time-only" => Ok(KernelMode::TimeOnly),
            "time-value" => Ok(KernelMode::TimeValue),
            other => Err(Error::Config(format!("unknown kernel mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub mode: KernelMode,
    /// Width over frames.
    pub sigma_t: f64,
    /// Width over Hz; only read in time-value mode.
    pub sigma_q: f64,
    /// Added to the Gram diagonal.
    pub jitter: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            mode: KernelMode::TimeOnly,
            sigma_t: 8.0,
            sigma_q: 50.0,
            jitter: 1e-8,
        }
    }
}

impl KernelSpec {
    pub fn time_only(sigma_t: f64) -> Self {
        Self {
            sigma_t,
            ..Self::default()
        }
    }

    pub fn time_value(sigma_t: f64, sigma_q: f64) -> Self {
        Self {
            mode: KernelMode::TimeValue,
            sigma_t,
            sigma_q,
            ..Self::default()
        }
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_t > 0.0) || !self.sigma_t.is_finite() {
            return Err(Error::Config(format!("sigma_t must be > 0, got {}", self.sigma_t)));
        }
        if self.mode == KernelMode::TimeValue && (!(self.sigma_q > 0.0) || !self.sigma_q.is_finite())
        {
            return Err(Error::Config(format!("sigma_q must be > 0, got {}", self.sigma_q)));
        }
        if !(self.jitter >= 0.0) {
            return Err(Error::Config(format!("jitter must be >= 0, got {}", self.jitter)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegistrationConfig {
    pub kernel: KernelSpec,
    /// Weight of the endpoint data term.
    pub lambda: f64,
    /// Integration steps over s in [0, 1].
    pub steps: usize,
    pub max_iters: usize,
    /// Stop once the gradient is below this in max-norm (see [`register`]).
    pub grad_tol: f64,
    /// Trial step of the first line search.
    pub step_init: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            kernel: KernelSpec::default(),
            lambda: 10.0,
            steps: 20,
            max_iters: 500,
            grad_tol: 1e-6,
            step_init: 1.0,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if !(self.lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::Config(format!("grad_tol must be > 0, got {}", self.grad_tol)));
        }
        if !(self.step_init > 0.0) {
            return Err(Error::Config(format!("step_init must be > 0, got {}", self.step_init)));
        }
        Ok(())
    }
}

/// Landmark positions and momenta sampled at every integration step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub q: Vec<Vec<f64>>,
    pub m: Vec<Vec<f64>>,
    pub hamiltonian: Vec<f64>,
}

impl Trajectory {
    pub fn endpoint(&self) -> &[f64] {
        self.q.last().expect("trajectory has at least one state")
    }

    /// Largest `|H(s) - H(0)| / max(1, |H(0)|)` along the path.
    pub fn relative_hamiltonian_drift(&self) -> f64 {
        let h0 = self.hamiltonian[0];
        self.hamiltonian
            .iter()
            .map(|h| (h - h0).abs() / h0.abs().max(1.0))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    pub momenta: Momenta,
    pub warped: F0Contour,
    /// Energy after every accepted iterate, starting with `m0 = 0`.
    pub energy_trace: Vec<f64>,
    pub endpoint_mse: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Max-norm of the stopping gradient at the returned momenta.
    pub grad_norm: f64,
    /// Set when the per-frame warp at s = 1 is not monotone in frequency.
    pub invertibility_warning: bool,
}

impl RegistrationResult {
    pub fn final_energy(&self) -> f64 {
        *self.energy_trace.last().expect("trace starts with the initial energy")
    }
}

pub(crate) fn check_pair(p_a: &F0Contour, p_b: &F0Contour, m0: Option<&Momenta>) -> Result<()> {
    if p_a.len() != p_b.len() {
        return Err(Error::Precondition(format!(
            "source has {} frames, target has {}",
            p_a.len(),
            p_b.len()
        )));
    }
    if let Some(m) = m0 {
        if m.len() != p_a.len() {
            return Err(Error::Precondition(format!(
                "momenta have {} frames, contour has {}",
                m.len(),
                p_a.len()
            )));
        }
    }
    Ok(())
}
