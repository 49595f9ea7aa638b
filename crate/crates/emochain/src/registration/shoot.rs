use super::kernel::Dynamics;
use super::{check_pair, KernelSpec, Trajectory};
use crate::error::{Error, Result};
use crate::features::{F0Contour, Momenta};

/// Integrates the geodesic from `(p_A, m0)` over s in [0, 1] with classical
/// RK4 and `steps` equal steps.
pub fn shoot(p_a: &F0Contour, m0: &Momenta, kernel: &KernelSpec, steps: usize) -> Result<Trajectory> {
    check_pair(p_a, p_a, Some(m0))?;
    kernel.validate()?;
    if steps == 0 {
        return Err(Error::Config("steps must be >= 1".into()));
    }
    let dynamics = Dynamics::new(*kernel, p_a.len());
    let (q, m) = integrate(&dynamics, p_a.values(), m0.values(), steps)?;
    let hamiltonian = q
        .iter()
        .zip(&m)
        .map(|(q, m)| dynamics.hamiltonian(q, m))
        .collect();
    Ok(Trajectory { q, m, hamiltonian })
}

pub(crate) type States = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// All `steps + 1` states of the RK4 integration.
pub(crate) fn integrate(dynamics: &Dynamics, q0: &[f64], m0: &[f64], steps: usize) -> Result<States> {
    let n = dynamics.len();
    let h = 1.0 / steps as f64;
    let mut qs = Vec::with_capacity(steps + 1);
    let mut ms = Vec::with_capacity(steps + 1);
    qs.push(q0.to_vec());
    ms.push(m0.to_vec());

    let mut stage = Stage::new(n);
    for step in 0..steps {
        let (q, m) = (&qs[step], &ms[step]);
        stage.run(dynamics, q, m, h);
        let mut q_next = q.clone();
        let mut m_next = m.clone();
        for i in 0..n {
            q_next[i] += h / 6.0
                * (stage.kq[0][i] + 2.0 * stage.kq[1][i] + 2.0 * stage.kq[2][i] + stage.kq[3][i]);
            m_next[i] += h / 6.0
                * (stage.km[0][i] + 2.0 * stage.km[1][i] + 2.0 * stage.km[2][i] + stage.km[3][i]);
        }
        if q_next.iter().chain(&m_next).any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: step + 1 });
        }
        qs.push(q_next);
        ms.push(m_next);
    }
    Ok((qs, ms))
}

/// Stage slopes and stage states of one RK4 step.
struct Stage {
    kq: [Vec<f64>; 4],
    km: [Vec<f64>; 4],
    xq: [Vec<f64>; 4],
    xm: [Vec<f64>; 4],
}

impl Stage {
    fn new(n: usize) -> Self {
        let z = || vec![0.0; n];
        Self {
            kq: [z(), z(), z(), z()],
            km: [z(), z(), z(), z()],
            xq: [z(), z(), z(), z()],
            xm: [z(), z(), z(), z()],
        }
    }

    fn run(&mut self, dynamics: &Dynamics, q: &[f64], m: &[f64], h: f64) {
        const OFFSETS: [f64; 4] = [0.0, 0.5, 0.5, 1.0];
        for s in 0..4 {
            let (prev_q, prev_m) = if s == 0 {
                (None, None)
            } else {
                (Some(self.kq[s - 1].clone()), Some(self.km[s - 1].clone()))
            };
            for i in 0..q.len() {
                let off = OFFSETS[s] * h;
                self.xq[s][i] = q[i] + prev_q.as_ref().map_or(0.0, |k| off * k[i]);
                self.xm[s][i] = m[i] + prev_m.as_ref().map_or(0.0, |k| off * k[i]);
            }
            let (xq, xm) = (&self.xq[s], &self.xm[s]);
            let (kq, km) = (&mut self.kq[s], &mut self.km[s]);
            dynamics.field(xq, xm, kq, km);
        }
    }
}

/// Pulls the cotangent `(aq, am)` of the final state back to the initial
/// state through the discrete RK4 map. Exact for the discretized flow.
pub(crate) fn adjoint(
    dynamics: &Dynamics,
    states: &States,
    mut aq: Vec<f64>,
    mut am: Vec<f64>,
) -> (Vec<f64>, Vec<f64>) {
    let n = dynamics.len();
    let steps = states.0.len() - 1;
    let h = 1.0 / steps as f64;
    let weights = [h / 6.0, h / 3.0, h / 3.0, h / 6.0];
    // Stage s takes its state from stage s - 1 with this scale.
    let offsets = [0.0, 0.5 * h, 0.5 * h, h];
    let mut stage = Stage::new(n);

    for step in (0..steps).rev() {
        stage.run(dynamics, &states.0[step], &states.1[step], h);
        // Cotangent of stage slope s, accumulated from later stages.
        let mut next_q = vec![0.0; n];
        let mut next_m = vec![0.0; n];
        let mut total_q = aq.clone();
        let mut total_m = am.clone();
        for s in (0..4).rev() {
            let u: Vec<f64> = (0..n).map(|i| weights[s] * aq[i] + next_q[i]).collect();
            let w: Vec<f64> = (0..n).map(|i| weights[s] * am[i] + next_m[i]).collect();
            let mut bq = vec![0.0; n];
            let mut bm = vec![0.0; n];
            dynamics.field_vjp(&stage.xq[s], &stage.xm[s], &u, &w, &mut bq, &mut bm);
            for i in 0..n {
                total_q[i] += bq[i];
                total_m[i] += bm[i];
            }
            if s > 0 {
                next_q = bq.iter().map(|b| offsets[s] * b).collect();
                next_m = bm.iter().map(|b| offsets[s] * b).collect();
            }
        }
        aq = total_q;
        am = total_m;
    }
    (aq, am)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registration::gram_matrix;
    use crate::registration::kernel::frame_indices;

    #[test]
    fn zero_momenta_is_identity_flow() {
        let p = F0Contour::voiced(vec![110.0, 130.0, 125.0, 90.0]).unwrap();
        for kernel in [KernelSpec::time_only(2.0), KernelSpec::time_value(2.0, 20.0)] {
            let traj = shoot(&p, &Momenta::zeros(4), &kernel, 20).unwrap();
            assert_eq!(traj.endpoint(), p.values());
            assert!(traj.hamiltonian.iter().all(|h| *h == 0.0));
        }
    }

    #[test]
    fn time_only_endpoint_is_linear_in_momenta() {
        let p = F0Contour::voiced(vec![110.0, 130.0, 125.0, 90.0, 100.0]).unwrap();
        let m0 = Momenta::new(vec![1.5, -0.5, 2.0, 0.25, -1.0]).unwrap();
        let kernel = KernelSpec::time_only(1.7);
        let traj = shoot(&p, &m0, &kernel, 20).unwrap();
        let g = gram_matrix(&frame_indices(5), p.values(), &kernel).unwrap();
        let gm = g.mul_vec(m0.values());
        for i in 0..5 {
            assert!((traj.endpoint()[i] - (p.values()[i] + gm[i])).abs() < 1e-12);
        }
        for m in &traj.m {
            assert_eq!(m, m0.values());
        }
    }

    #[test]
    fn symmetric_pair_stays_symmetric_and_matches_fine_integration() {
        let p = F0Contour::voiced(vec![100.0, 120.0]).unwrap();
        let m0 = Momenta::new(vec![0.8, -0.8]).unwrap();
        let kernel = KernelSpec::time_value(1.0, 15.0);
        let coarse = shoot(&p, &m0, &kernel, 20).unwrap();
        let fine = shoot(&p, &m0, &kernel, 200).unwrap();
        let end = coarse.endpoint();
        assert!((end[0] + end[1] - 220.0).abs() < 1e-10);
        for (a, b) in end.iter().zip(fine.endpoint()) {
            assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn divergence_reports_step() {
        let p = F0Contour::voiced(vec![100.0, 101.0]).unwrap();
        let m0 = Momenta::new(vec![1e200, -1e200]).unwrap();
        let err = shoot(&p, &m0, &KernelSpec::time_value(1.0, 1.0), 4).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err:?}");
    }
}
