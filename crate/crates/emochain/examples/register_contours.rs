//! Registers a falling neutral contour onto a raised, steeper one with both
//! kernels and prints the fit.

use emochain::features::F0Contour;
use emochain::registration::{register, KernelMode, KernelSpec, RegistrationConfig};

fn main() -> emochain::Result<()> {
    let n = 96;
    let source: Vec<f64> = (0..n).map(|t| 180.0 - 0.4 * t as f64 + 8.0 * (t as f64 / 7.0).sin()).collect();
    let target: Vec<f64> = source.iter().enumerate().map(|(t, v)| 1.2 * v + 10.0 * (t as f64 / 20.0).cos()).collect();
    let (p_a, p_b) = (F0Contour::voiced(source)?, F0Contour::voiced(target)?);

    for mode in [KernelMode::TimeOnly, KernelMode::TimeValue] {
        let config = RegistrationConfig {
            kernel: KernelSpec { mode, ..KernelSpec::default() },
            ..RegistrationConfig::default()
        };
        let r = register(&p_a, &p_b, &config)?;
        println!(
            "{mode:?}: {} iterations, converged {} (|grad| {:.1e}), energy {:.4} -> {:.4}, endpoint mse {:.4} Hz^2",
            r.iterations,
            r.converged,
            r.grad_norm,
            r.energy_trace[0],
            r.final_energy(),
            r.endpoint_mse
        );
    }
    Ok(())
}
