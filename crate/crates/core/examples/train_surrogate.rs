//! Generate a small decaying-turbulence dataset, train the full model on it
//! and save the best checkpoint.
//!
//! cargo run --release --example train_surrogate -- [epochs] [out_dir]

use std::path::PathBuf;

use vortcast::datasets::{generate_dataset, Dataset, Regime};
use vortcast::model::{HdsConfig, ModelConfig};
use vortcast::training::{train_with_progress, TrainConfig, BEST_CHECKPOINT};

fn main() -> vortcast::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let out = args.get(2).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("vortcast_train_surrogate"));

    let n = 32;
    let data_dir = out.join("data");
    generate_dataset(Regime::Decaying, 8, 16, &Regime::Decaying.sim_config(n), 42, &data_dir)?;
    let data = Dataset::open(&data_dir)?;
    println!("dataset: {} trajectories, normalization {:?}", data.manifest.trajectory_files.len(), data.normalization());

    let model = ModelConfig { n, widths: vec![4, 8, 16], hds: HdsConfig { heads: 2, ..HdsConfig::default() }, ..ModelConfig::default() };
    let train = TrainConfig { epochs, ..TrainConfig::default() };
    let run_dir = out.join("run");
    let outcome = train_with_progress(&model, &train, &data, Some(&run_dir), &mut |epoch, tr, va| {
        println!("epoch {epoch:>3}  train {tr:.5}  val {va:.5}");
    })?;
    println!(
        "{} parameters, best val {:.5} at epoch {}; checkpoint {}",
        outcome.best.model.param_count(),
        outcome.best_val_loss,
        outcome.best.epoch,
        run_dir.join(BEST_CHECKPOINT).display()
    );
    Ok(())
}
