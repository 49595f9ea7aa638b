use std::collections::VecDeque;

use super::energy::{Evaluation, Problem};
use super::kernel::Dynamics;
use super::{check_pair, KernelMode, RegistrationConfig, RegistrationResult};
use crate::error::{Error, Result};
use crate::features::{F0Contour, Momenta};
use crate::linalg::{dot, norm_inf};

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
/// Approximate Wolfe test (Hager and Zhang), used once energy changes fall
/// to the rounding floor of the energy.
const WOLFE_DELTA: f64 = 0.1;
const WOLFE_SIGMA: f64 = 0.9;
const ROUNDING_FLOOR: f64 = 1e-10;
const MEMORY: usize = 8;
/// Frequency samples per frame for the warp monotonicity check.
const WARP_SAMPLES: usize = 256;

/// Registers `p_a` onto `p_b` by descent on the momenta energy from `m0 = 0`.
///
/// Time-only energy is quadratic: directions are conjugate gradients in the
/// kernel metric at `p_A` with exact line steps. Time-value directions come
/// from a limited-memory quasi-Newton recursion. Every step passes a
/// backtracking Armijo test on the energy, or, once energy changes are
/// lost to rounding, an approximate Wolfe test on the slope, so the
/// recorded trace never increases. Iteration stops once the gradient falls below `grad_tol` in
/// max-norm: the kernel-metric gradient for the time-only kernel (whose
/// Euclidean gradient is too ill-conditioned to resolve), the Euclidean
/// gradient for the time-value kernel.
pub fn register(p_a: &F0Contour, p_b: &F0Contour, config: &RegistrationConfig) -> Result<RegistrationResult> {
    check_pair(p_a, p_b, None)?;
    config.validate()?;
    let problem = Problem::new(p_a.values(), p_b.values(), config);
    let n = p_a.len();
    let mode = problem.dynamics.mode();

    let mut m = vec![0.0; n];
    let mut current = problem.evaluate(&m, true)?;
    let mut trace = vec![current.energy];
    let mut memory: VecDeque<Pair> = VecDeque::with_capacity(MEMORY);
    let mut previous: Option<Previous> = None;
    let mut iterations = 0;

    while stationarity(&current, mode) > config.grad_tol && iterations < config.max_iters {
        let (direction, slope) = match mode {
            KernelMode::TimeOnly => conjugate_direction(&current, previous.as_ref()),
            KernelMode::TimeValue => quasi_newton_direction(&problem, &current, &memory),
        };
        let mut alpha = problem
            .exact_step(slope, &direction)
            .unwrap_or(if memory.is_empty() { config.step_init } else { 1.0 });
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = m.iter().zip(&direction).map(|(x, d)| x + alpha * d).collect();
            // A diverging trial point only means the step is too long.
            if let Ok(candidate) = problem.evaluate(&trial, true) {
                let change = problem.energy_change(&current, &candidate, &direction, alpha);
                if change <= ARMIJO_C * alpha * slope {
                    accepted = Some((trial, candidate, change));
                    break;
                }
                let new_slope = dot(&candidate.gradient, &direction);
                if change.abs() <= ROUNDING_FLOOR * current.energy
                    && new_slope >= WOLFE_SIGMA * slope
                    && new_slope <= (2.0 * WOLFE_DELTA - 1.0) * slope
                {
                    // Trapezoid estimate of the change; negative by the test.
                    let change = 0.5 * alpha * (slope + new_slope);
                    accepted = Some((trial, candidate, change));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((trial, candidate, change)) = accepted else {
            let result = finish(&problem, p_a, p_b, &m, &current, trace, iterations, false)?;
            return Err(Error::Stagnation(Box::new(result)));
        };

        match mode {
            KernelMode::TimeOnly => {
                previous = Some(Previous {
                    weight: metric_weight(&current),
                    direction,
                })
            }
            KernelMode::TimeValue => {
                let s: Vec<f64> = trial.iter().zip(&m).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = candidate.gradient.iter().zip(&current.gradient).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
                    if memory.len() == MEMORY {
                        memory.pop_front();
                    }
                    memory.push_back(Pair { s, y, rho: 1.0 / sy });
                }
            }
        }

        // Summing accepted changes keeps the trace monotone below the
        // rounding floor of the energy itself.
        trace.push(trace.last().unwrap() + change);
        m = trial;
        current = candidate;
        iterations += 1;
    }

    let converged = stationarity(&current, mode) <= config.grad_tol;
    finish(&problem, p_a, p_b, &m, &current, trace, iterations, converged)
}

/// Norm checked against `grad_tol`: the kernel-metric gradient for the
/// time-only kernel, the Euclidean gradient otherwise.
fn stationarity(e: &Evaluation, mode: KernelMode) -> f64 {
    match mode {
        KernelMode::TimeOnly => norm_inf(&e.metric_gradient),
        KernelMode::TimeValue => norm_inf(&e.gradient),
    }
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

struct Previous {
    direction: Vec<f64>,
    weight: f64,
}

/// `grad . K^{-1} grad`, the squared gradient length in the kernel metric.
fn metric_weight(e: &Evaluation) -> f64 {
    dot(&e.gradient, &e.metric_gradient)
}

/// Conjugate gradient direction preconditioned by the kernel metric. With
/// exact steps on the quadratic time-only energy this minimizes the energy
/// over a growing Krylov space, so every step lowers it.
fn conjugate_direction(current: &Evaluation, previous: Option<&Previous>) -> (Vec<f64>, f64) {
    let mut d: Vec<f64> = current.metric_gradient.iter().map(|v| -v).collect();
    if let Some(p) = previous {
        let beta = metric_weight(current) / p.weight;
        if beta.is_finite() {
            d.iter_mut().zip(&p.direction).for_each(|(di, pi)| *di += beta * pi);
        }
    }
    let slope = dot(&current.gradient, &d);
    if slope < 0.0 {
        return (d, slope);
    }
    let d: Vec<f64> = current.metric_gradient.iter().map(|v| -v).collect();
    let slope = dot(&current.gradient, &d);
    (d, slope)
}

/// Limited-memory quasi-Newton direction on the Euclidean gradient, seeded
/// with the shifted Gram preconditioner, and its slope. Falls back to the
/// preconditioned gradient, then the plain gradient, when a candidate is
/// not a descent direction.
fn quasi_newton_direction(problem: &Problem<'_>, current: &Evaluation, memory: &VecDeque<Pair>) -> (Vec<f64>, f64) {
    let grad = &current.gradient;
    if let Some(last) = memory.back() {
        let mut r = grad.clone();
        let mut alphas = Vec::with_capacity(memory.len());
        for p in memory.iter().rev() {
            let a = p.rho * dot(&p.s, &r);
            r.iter_mut().zip(&p.y).for_each(|(ri, yi)| *ri -= a * yi);
            alphas.push(a);
        }
        let py = problem.precondition_vec(&last.y);
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &py);
        let mut r: Vec<f64> = problem.precondition_vec(&r).iter().map(|v| gamma * v).collect();
        for (p, a) in memory.iter().zip(alphas.iter().rev()) {
            let b = p.rho * dot(&p.y, &r);
            r.iter_mut().zip(&p.s).for_each(|(ri, si)| *ri += (a - b) * si);
        }
        let d: Vec<f64> = r.iter().map(|v| -v).collect();
        let slope = dot(grad, &d);
        if slope < 0.0 {
            return (d, slope);
        }
    }
    let d: Vec<f64> = problem.precondition_vec(grad).iter().map(|v| -v).collect();
    let slope = dot(grad, &d);
    if slope < 0.0 {
        return (d, slope);
    }
    let d: Vec<f64> = grad.iter().map(|v| -v).collect();
    let slope = -dot(grad, grad);
    (d, slope)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    problem: &Problem<'_>,
    p_a: &F0Contour,
    p_b: &F0Contour,
    m: &[f64],
    current: &Evaluation,
    energy_trace: Vec<f64>,
    iterations: usize,
    converged: bool,
) -> Result<RegistrationResult> {
    let warped_values: Vec<f64> = current.endpoint.iter().map(|v| v.max(0.0)).collect();
    let warped = p_a.with_values(warped_values)?;
    let endpoint_mse = warped
        .values()
        .iter()
        .zip(p_b.values())
        .map(|(w, b)| (w - b) * (w - b))
        .sum::<f64>()
        / warped.len() as f64;
    let invertibility_warning = match problem.dynamics.mode() {
        KernelMode::TimeOnly => false,
        KernelMode::TimeValue => !warp_is_monotone(&problem.dynamics, p_a.values(), m, problem.steps)?,
    };
    Ok(RegistrationResult {
        momenta: Momenta::new(m.to_vec())?,
        warped,
        energy_trace,
        endpoint_mse,
        iterations,
        converged,
        grad_norm: stationarity(current, problem.dynamics.mode()),
        invertibility_warning,
    })
}

/// Samples the derivative of `x -> x + sum_j K((t, x), (j, q_j)) m_j` at
/// s = 1 for every frame `t` over `[min p_A - 3 sigma_q, max p_A + 3 sigma_q]`.
fn warp_is_monotone(dynamics: &Dynamics, p_a: &[f64], m0: &[f64], steps: usize) -> Result<bool> {
    let (qs, ms) = super::shoot::integrate(dynamics, p_a, m0, steps)?;
    let (q, m) = (qs.last().unwrap(), ms.last().unwrap());
    let kernel = dynamics.kernel();
    let sigma_q = kernel.sigma_q;
    let lo = p_a.iter().cloned().fold(f64::INFINITY, f64::min) - 3.0 * sigma_q;
    let hi = p_a.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 3.0 * sigma_q;
    let n = p_a.len();
    let inv_t = 1.0 / (2.0 * kernel.sigma_t * kernel.sigma_t);
    let inv_q = 1.0 / (2.0 * sigma_q * sigma_q);
    for t in 0..n {
        let time_weights: Vec<f64> = (0..n)
            .map(|j| {
                let dt = t as f64 - j as f64;
                (-dt * dt * inv_t).exp() * m[j]
            })
            .collect();
        for k in 0..=WARP_SAMPLES {
            let x = lo + (hi - lo) * k as f64 / WARP_SAMPLES as f64;
            let slope: f64 = 1.0
                - (0..n)
                    .map(|j| {
                        let d = x - q[j];
                        time_weights[j] * (-d * d * inv_q).exp() * d * 2.0 * inv_q
                    })
                    .sum::<f64>();
            if slope <= 0.0 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registration::{solve_momenta_closed_form, KernelSpec};

    fn contour(values: impl IntoIterator<Item = f64>) -> F0Contour {
        F0Contour::voiced(values.into_iter().collect()).unwrap()
    }

    #[test]
    fn identity_registration_stops_immediately() {
        let p = contour((0..32).map(|i| 150.0 + 20.0 * (i as f64 / 5.0).sin()));
        let r = register(&p, &p, &RegistrationConfig::default()).unwrap();
        assert_eq!(r.iterations, 0);
        assert!(r.momenta.values().iter().all(|v| *v == 0.0));
        assert_eq!(r.final_energy(), 0.0);
        assert!(r.converged);
    }

    #[test]
    fn matches_closed_form_on_small_pair() {
        let a = contour((0..16).map(|i| 140.0 + 15.0 * (i as f64 / 3.0).sin()));
        let b = contour((0..16).map(|i| 170.0 + 10.0 * (i as f64 / 4.0).cos()));
        let config = RegistrationConfig::default();
        let r = register(&a, &b, &config).unwrap();
        let exact = solve_momenta_closed_form(&a, &b, &config.kernel, config.lambda).unwrap();
        let scale = norm_inf(exact.values());
        let err = r
            .momenta
            .values()
            .iter()
            .zip(exact.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-6 * scale, "err {err}, scale {scale}");
        assert!(r.energy_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn shifted_target_is_recovered() {
        let a = contour((0..64).map(|i| 130.0 + 25.0 * (i as f64 / 9.0).sin()));
        let b = a.with_values(a.values().iter().map(|v| v + 20.0).collect()).unwrap();
        let r = register(&a, &b, &RegistrationConfig::default()).unwrap();
        assert!(r.endpoint_mse <= 0.01 * 400.0, "mse {}", r.endpoint_mse);
    }

    #[test]
    fn time_value_registration_decreases_energy() {
        let a = contour((0..24).map(|i| 130.0 + 25.0 * (i as f64 / 5.0).sin()));
        let b = contour((0..24).map(|i| 140.0 + 20.0 * (i as f64 / 6.0).sin()));
        let config = RegistrationConfig {
            kernel: KernelSpec::time_value(4.0, 50.0),
            ..RegistrationConfig::default()
        };
        let r = register(&a, &b, &config).unwrap();
        assert!(r.energy_trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(r.final_energy() < 0.05 * r.energy_trace[0]);
        assert!(!r.invertibility_warning);
    }
}
