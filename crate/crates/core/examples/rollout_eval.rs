//! Roll a briefly trained surrogate forward on a held-out trajectory and
//! compare it with the persistence baseline step by step. Metrics and
//! spectra are written as CSV.
//!
//! cargo run --release --example rollout_eval -- [epochs] [steps]

use vortcast::datasets::{generate_dataset, Dataset, Regime};
use vortcast::evaluate::{evaluate_trajectory, Persistence, Surrogate};
use vortcast::model::{HdsConfig, ModelConfig};
use vortcast::report::{emit_rollout, Format};
use vortcast::spectral::default_cutoff;
use vortcast::training::{train, TrainConfig};

fn main() -> vortcast::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(10);

    let n = 32;
    let out = std::env::temp_dir().join("vortcast_rollout_eval");
    generate_dataset(Regime::Decaying, 8, steps + 8, &Regime::Decaying.sim_config(n), 7, &out.join("data"))?;
    let data = Dataset::open(&out.join("data"))?;
    let model = ModelConfig { n, widths: vec![4, 8, 16], hds: HdsConfig { heads: 2, ..HdsConfig::default() }, ..ModelConfig::default() };
    let outcome = train(&model, &TrainConfig { epochs, ..TrainConfig::default() }, &data, None)?;
    let surrogate = Surrogate::from(outcome.best);

    let k_c = default_cutoff(n);
    let gt = data.frames(data.manifest.test[0]);
    let ours = evaluate_trajectory(&surrogate, &gt, steps, k_c, "surrogate")?;
    let base = evaluate_trajectory(&Persistence, &gt, steps, k_c, "persistence")?;
    println!("step   rel L2 (model / persistence)   SSIM (model / persistence)   high-band error");
    for (a, b) in ours.steps.iter().zip(&base.steps) {
        println!(
            "{:>4}   {:.4} / {:.4}                {:.4} / {:.4}               {:.4e}",
            a.step, a.rel_l2, b.rel_l2, a.ssim, b.ssim, a.eps_high
        );
    }
    println!("mean rel L2: model {:.4}, persistence {:.4}", ours.mean_rel_l2(), base.mean_rel_l2());
    let written = emit_rollout(&ours, &out, "rollout", &[1, steps], &[Format::Csv])?;
    println!("wrote {} files under {}", written.len(), out.display());
    Ok(())
}
