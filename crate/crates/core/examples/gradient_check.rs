//! Check every differentiable op and the composed model against central
//! finite differences.
//!
//! cargo run --release --example gradient_check -- [seed]

use vortcast::selftest::{composed_model_check, run_op_checks, MODEL_TOLERANCE, OP_TOLERANCE};

fn main() -> vortcast::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    for c in run_op_checks(&[seed])? {
        let status = if c.report.passed(OP_TOLERANCE) { "ok  " } else { "FAIL" };
        println!("{status} {:<22} max rel error {:.2e} over {} coordinates", c.op, c.report.max_rel_error, c.report.coords_checked);
    }
    let r = composed_model_check(seed)?;
    let status = if r.passed(MODEL_TOLERANCE) { "ok  " } else { "FAIL" };
    println!(
        "{status} {:<22} max rel error {:.2e} over {} coordinates ({} skipped at activation kinks)",
        "composed model", r.max_rel_error, r.coords_checked, r.coords_skipped
    );
    Ok(())
}
