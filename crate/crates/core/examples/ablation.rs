//! Train every model variant and compare validation loss, rollout error and
//! high-band spectral error. The default is a reduced study that runs in a
//! few minutes; `--desk` runs the desk-scale study (hours on one core).
//!
//! cargo run --release --example ablation -- [--desk]

use vortcast::ablation::{run_study, StudyConfig};
use vortcast::training::TrainConfig;

fn main() -> vortcast::Result<()> {
    let desk = std::env::args().any(|a| a == "--desk");
    let config = if desk {
        StudyConfig::default()
    } else {
        let n = 32;
        StudyConfig {
            n,
            trajectories: 6,
            frames: 24,
            seeds: vec![42],
            train: TrainConfig { epochs: 2, ..TrainConfig::default() },
            rollout_steps: 10,
            spectrum_step: 5,
            k_c: n as f64 / 4.0,
            ..StudyConfig::default()
        }
    };
    let dir = std::env::temp_dir().join("vortcast_ablation");
    let report = run_study(&config, &dir, &mut |line| println!("{line}"))?;
    for seed in report.seeds() {
        println!(
            "seed {seed}: val full < no_hds {:?}; rollout ordering {:?}; spectral full < no_hds {:?}",
            report.val_full_beats_no_hds(seed),
            report.rollout_ordering_holds(seed),
            report.spectral_full_beats_no_hds(seed)
        );
    }
    print!("{}", report.to_csv());
    println!("total {:.0}s on {} worker threads", report.total_secs, report.threads);
    Ok(())
}
