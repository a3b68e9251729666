//! Track how a decaying flow's enstrophy spectrum changes over time, split the
//! field at a cutoff wavenumber and check the spectral bookkeeping.
//!
//! cargo run --release --example spectrum_analysis -- [n] [steps]

use vortcast::dns::{simulate, SimConfig};
use vortcast::spectral::{default_cutoff, enstrophy, enstrophy_spectrum, normalized_spectral_error, project_high, project_low};

fn main() -> vortcast::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(64);
    let steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(400);
    let cfg = SimConfig { steps, save_every: steps, ..SimConfig::decaying(n) };
    let traj = simulate(&cfg)?;
    let (first, last) = (&traj.frames[0], &traj.frames[traj.frames.len() - 1]);

    let (s0, s1) = (enstrophy_spectrum(first)?, enstrophy_spectrum(last)?);
    println!("enstrophy {:.6} -> {:.6}; spectrum totals {:.6} -> {:.6}", enstrophy(first), enstrophy(last), s0.total(), s1.total());
    println!("   k      E_Z(t=0)      E_Z(t_end)   normalized change");
    let err = normalized_spectral_error(&s1, &s0)?;
    for k in (1..s0.k_bins.len()).step_by(4) {
        let e = err[k].map_or("    n/a".to_string(), |e| format!("{e:+.4}"));
        println!("{:>4}  {:>12.4e}  {:>12.4e}   {e}", s0.k_bins[k], s0.density[k], s1.density[k]);
    }

    let k_c = default_cutoff(n);
    let (hi, lo) = (project_high(last, k_c)?, project_low(last, k_c)?);
    let recon = hi.add(&lo).sub(last).norm() / last.norm();
    let cross = hi.dot(&lo).abs() / (hi.norm() * lo.norm());
    println!("cutoff k_c = {k_c}: high band holds {:.2}% of the enstrophy", 100.0 * enstrophy(&hi) / enstrophy(last));
    println!("split residual {recon:.2e}, band cross-correlation {cross:.2e}");
    Ok(())
}
