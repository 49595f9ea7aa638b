use super::kernel::{frame_indices, gram_matrix};
use super::{check_pair, KernelMode, KernelSpec};
use crate::error::{Error, Result};
use crate::features::{F0Contour, Momenta};
use crate::linalg::{Cholesky, SquareMatrix};

/// Minimizer of the time-only registration energy.
///
/// Setting the gradient `G m + 2 lambda G (p_A + G m - p_B)` to zero and
/// cancelling the positive-definite `G` leaves the well-conditioned system
/// `(I + 2 lambda G) m = 2 lambda (p_B - p_A)`.
pub fn solve_momenta_closed_form(
    p_a: &F0Contour,
    p_b: &F0Contour,
    kernel: &KernelSpec,
    lambda: f64,
) -> Result<Momenta> {
    check_pair(p_a, p_b, None)?;
    kernel.validate()?;
    if kernel.mode != KernelMode::TimeOnly {
        return Err(Error::UnsupportedMode(
            "closed-form momenta exist only for the time-only kernel".into(),
        ));
    }
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("lambda must be > 0, got {lambda}")));
    }
    let n = p_a.len();
    let g = gram_matrix(&frame_indices(n), p_a.values(), kernel)?;
    // Confirms G itself is positive definite.
    Cholesky::factor(&g)?;
    let system = SquareMatrix::from_fn(n, |i, j| {
        let identity = if i == j { 1.0 } else { 0.0 };
        identity + 2.0 * lambda * g.get(i, j)
    });
    let rhs: Vec<f64> = p_b
        .values()
        .iter()
        .zip(p_a.values())
        .map(|(b, a)| 2.0 * lambda * (b - a))
        .collect();
    let m = Cholesky::factor(&system)?.solve(&rhs);
    Momenta::new(m)
}
