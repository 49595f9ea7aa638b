//! Finite-difference check of every layer kind on random instances.

use emochain::nn::{run_layer_suite, DEFAULT_GRAD_TOL};

fn main() -> emochain::Result<()> {
    let entries = run_layer_suite(3, DEFAULT_GRAD_TOL, 0)?;
    for e in &entries {
        println!(
            "{:>16} #{} {:?}: {} worst rel err {:.2e} over {} entries",
            e.kind, e.instance, e.input_shape, if e.report.passed { "ok" } else { "FAIL" }, e.report.worst_error, e.report.checked
        );
    }
    Ok(())
}
