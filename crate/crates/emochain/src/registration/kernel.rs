use super::{KernelMode, KernelSpec};
use crate::error::{Error, Result};
use crate::linalg::SquareMatrix;

/// Gram matrix of the kernel over landmarks placed at `t_indices` (frames)
/// with contour `values` (Hz). The diagonal carries `1 + jitter`.
pub fn gram_matrix(t_indices: &[f64], values: &[f64], kernel: &KernelSpec) -> Result<SquareMatrix> {
    kernel.validate()?;
    if t_indices.is_empty() || t_indices.len() != values.len() {
        return Err(Error::Precondition(format!(
            "{} time indices for {} values",
            t_indices.len(),
            values.len()
        )));
    }
    if let Some(v) = t_indices.iter().chain(values).find(|v| !v.is_finite()) {
        return Err(Error::NumericInput(format!("kernel input {v}")));
    }
    let n = values.len();
    let inv_t = 1.0 / (2.0 * kernel.sigma_t * kernel.sigma_t);
    let inv_q = 1.0 / (2.0 * kernel.sigma_q * kernel.sigma_q);
    let mut g = SquareMatrix::zeros(n);
    for i in 0..n {
        g.set(i, i, 1.0 + kernel.jitter);
        for j in 0..i {
            let dt = t_indices[i] - t_indices[j];
            let mut k = (-dt * dt * inv_t).exp();
            if kernel.mode == KernelMode::TimeValue {
                let dq = values[i] - values[j];
                k *= (-dq * dq * inv_q).exp();
            }
            g.set(i, j, k);
            g.set(j, i, k);
        }
    }
    Ok(g)
}

pub(crate) fn frame_indices(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64).collect()
}

/// Right-hand side of the Hamiltonian system and its transposed Jacobian.
///
/// Landmark `i` sits at frame `i`. With `Kt` the kernel without jitter and
/// `d_ij = q_i - q_j`, the time-value system reads
///
/// ```text
/// dq_i/ds = jitter * m_i + sum_j Kt_ij m_j
/// dm_i/ds = m_i / sigma_q^2 * sum_j Kt_ij d_ij m_j
/// ```
///
/// and in time-only mode `dm/ds = 0`.
#[derive(Debug, Clone)]
pub(crate) struct Dynamics {
    kernel: KernelSpec,
    n: usize,
    time_factor: SquareMatrix,
}

impl Dynamics {
    pub fn new(kernel: KernelSpec, n: usize) -> Self {
        let inv_t = 1.0 / (2.0 * kernel.sigma_t * kernel.sigma_t);
        let time_factor = SquareMatrix::from_fn(n, |i, j| {
            let dt = i as f64 - j as f64;
            (-dt * dt * inv_t).exp()
        });
        Self {
            kernel,
            n,
            time_factor,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn mode(&self) -> KernelMode {
        self.kernel.mode
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    fn inv_q(&self) -> f64 {
        1.0 / (2.0 * self.kernel.sigma_q * self.kernel.sigma_q)
    }

    /// Kernel without jitter, row-major.
    pub fn kernel_matrix(&self, q: &[f64]) -> SquareMatrix {
        match self.kernel.mode {
            KernelMode::TimeOnly => self.time_factor.clone(),
            KernelMode::TimeValue => {
                let inv_q = self.inv_q();
                SquareMatrix::from_fn(self.n, |i, j| {
                    let d = q[i] - q[j];
                    self.time_factor.get(i, j) * (-d * d * inv_q).exp()
                })
            }
        }
    }

    /// `K(q)` including jitter.
    pub fn gram(&self, q: &[f64]) -> SquareMatrix {
        let mut k = self.kernel_matrix(q);
        for i in 0..self.n {
            k.set(i, i, k.get(i, i) + self.kernel.jitter);
        }
        k
    }

    pub fn hamiltonian(&self, q: &[f64], m: &[f64]) -> f64 {
        0.5 * self.gram(q).quad_form(m)
    }

    pub fn field(&self, q: &[f64], m: &[f64], dq: &mut [f64], dm: &mut [f64]) {
        let n = self.n;
        let jitter = self.kernel.jitter;
        match self.kernel.mode {
            KernelMode::TimeOnly => {
                for i in 0..n {
                    let row = self.time_factor.row(i);
                    dq[i] = jitter * m[i] + row.iter().zip(m).map(|(k, mj)| k * mj).sum::<f64>();
                    dm[i] = 0.0;
                }
            }
            KernelMode::TimeValue => {
                let inv_q = self.inv_q();
                let inv_sq = 2.0 * inv_q;
                for i in 0..n {
                    let row = self.time_factor.row(i);
                    let mut vq = jitter * m[i];
                    let mut vm = 0.0;
                    for j in 0..n {
                        let d = q[i] - q[j];
                        let k = row[j] * (-d * d * inv_q).exp();
                        vq += k * m[j];
                        vm += k * d * m[j];
                    }
                    dq[i] = vq;
                    dm[i] = m[i] * inv_sq * vm;
                }
            }
        }
    }

    /// Accumulates `J^T (u, w)` of the field at `(q, m)` into `(gq, gm)`,
    /// where `u` pairs with `dq/ds` and `w` with `dm/ds`.
    pub fn field_vjp(
        &self,
        q: &[f64],
        m: &[f64],
        u: &[f64],
        w: &[f64],
        gq: &mut [f64],
        gm: &mut [f64],
    ) {
        let n = self.n;
        let jitter = self.kernel.jitter;
        match self.kernel.mode {
            KernelMode::TimeOnly => {
                for k in 0..n {
                    let row = self.time_factor.row(k);
                    gm[k] += jitter * u[k] + row.iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            KernelMode::TimeValue => {
                let inv_q = self.inv_q();
                let inv_sq = 2.0 * inv_q;
                for k in 0..n {
                    let row = self.time_factor.row(k);
                    // Kt m, E m, F m, Kt u, E (w*m), F (w*m) restricted to row k.
                    let mut ku = 0.0;
                    let mut e_m = 0.0;
                    let mut f_m = 0.0;
                    let mut e_u = 0.0;
                    let mut e_wm = 0.0;
                    let mut f_wm = 0.0;
                    for j in 0..n {
                        let d = q[k] - q[j];
                        let kt = row[j] * (-d * d * inv_q).exp();
                        let e = kt * d;
                        let f = kt * (1.0 - d * d * inv_sq);
                        let wm = w[j] * m[j];
                        ku += kt * u[j];
                        e_m += e * m[j];
                        f_m += f * m[j];
                        e_u += e * u[j];
                        e_wm += e * wm;
                        f_wm += f * wm;
                    }
                    gm[k] += jitter * u[k] + ku + inv_sq * (w[k] * e_m - e_wm);
                    gq[k] += -inv_sq * (u[k] * e_m + m[k] * e_u)
                        + inv_sq * (w[k] * m[k] * f_m - m[k] * f_wm);
                }
            }
        }
    }
}
