//! Error-accumulation bound: a constructed linear system where it must hold
//! at every step, then the estimated growth factor and one-step high-band
//! error of an untrained network on simulated frames.
//!
//! cargo run --release --example theorem_probe

use vortcast::datasets::Normalization;
use vortcast::dns::{simulate, SimConfig};
use vortcast::evaluate::{estimate_growth_factor, measure_delta_hf, random_direction, theorem_bound, StepModel, Surrogate};
use vortcast::model::{HdsConfig, Model, ModelConfig};
use vortcast::selftest::constructed_bound_check;
use vortcast::spectral::default_cutoff;

fn main() -> vortcast::Result<()> {
    let n = 32;
    let k_c = default_cutoff(n);
    let check = constructed_bound_check(n, 1.2, 0.01, 50, k_c, 0)?;
    let worst = check.measured.iter().zip(&check.bound).map(|(m, b)| m / b).fold(0.0, f64::max);
    println!("constructed system G = 1.2, delta = 0.01: bound holds at every step: {}", check.all_satisfied());
    println!("  closest approach measured/bound = {worst:.4}; bound at 50 steps {:.4}", theorem_bound(1.2, 0.01, check.eps0, 50));

    let traj = simulate(&SimConfig { steps: 200, save_every: 20, ..SimConfig::decaying(n) })?;
    let values: Vec<&[f64]> = traj.frames.iter().map(|f| f.values()).collect();
    let norm = Normalization::fit(values)?;
    let cfg = ModelConfig { n, widths: vec![4, 8, 16], hds: HdsConfig { heads: 2, ..HdsConfig::default() }, ..ModelConfig::default() };
    let model = Surrogate::new(Model::new(cfg)?, norm);

    let step = |x: &vortcast::VorticityField| model.step(std::slice::from_ref(x));
    let growth = estimate_growth_factor(&step, &traj.frames[0], k_c, &random_direction(n, 1), 30, 1e-4)?;
    let pairs: Vec<_> = traj.frames.windows(2).map(|w| (vec![w[0].clone()], w[1].clone())).collect();
    let delta = measure_delta_hf(&model, &pairs, k_c)?;
    println!(
        "untrained model: g_hat = {:.4} ({} iterations, converged {}), delta_HF = {:.4}",
        growth.g_hat, growth.iterations, growth.converged, delta.max
    );
    for m in [1, 5, 10] {
        println!("  bound after {m:>2} steps from eps0 = 0: {:.4}", theorem_bound(growth.g_hat, delta.max, 0.0, m));
    }
    Ok(())
}
