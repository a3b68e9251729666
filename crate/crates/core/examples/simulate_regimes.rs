//! Run both turbulence regimes and print energy/enstrophy summaries.
//!
//! cargo run --release --example simulate_regimes -- [n] [steps]

use vortcast::dns::{simulate, SimConfig};
use vortcast::spectral::enstrophy_spectrum;

fn main() -> vortcast::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(64);
    let steps: Option<usize> = args.get(2).and_then(|s| s.parse().ok());
    for (name, mut cfg) in [("decaying", SimConfig::decaying(n)), ("forced", SimConfig::forced(n))] {
        if let Some(s) = steps {
            cfg.steps = s;
        }
        let start = std::time::Instant::now();
        let traj = simulate(&cfg)?;
        let e = &traj.energy;
        println!(
            "{name}: {} frames, {} steps in {:.2?}; energy {:.4} -> {:.4}",
            traj.frames.len(),
            cfg.steps,
            start.elapsed(),
            e[0],
            e[e.len() - 1]
        );
        let stride = (e.len() / 12).max(1);
        for i in (0..e.len()).step_by(stride) {
            println!("  t={:7.3}  E={:.5}  Z={:.5}", i as f64 * cfg.dt, e[i], traj.enstrophy[i]);
        }
        let last = traj.frames.last().expect("at least one frame");
        let spec = enstrophy_spectrum(last)?;
        let peak = spec.density.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(k, _)| k);
        println!("  final enstrophy spectrum peaks at shell {:?}", peak);
    }
    Ok(())
}
