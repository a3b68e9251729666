use vortcast::dns::{grf_init, mcwilliams_init, simulate, SimConfig};
use vortcast::spectral::{enstrophy_spectrum, fft2, shell_index, wavenumber_grid};

fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[test]
fn decaying_energy_never_increases() {
    let traj = simulate(&SimConfig::decaying(64)).unwrap();
    assert_eq!(traj.frames.len(), 60);
    for (i, w) in traj.energy.windows(2).enumerate() {
        assert!(w[1] <= w[0], "energy rose at step {i}: {} -> {}", w[0], w[1]);
    }
    assert!(traj.energy.last().unwrap() < &traj.energy[0]);
    for f in &traj.frames {
        assert!(f.mean().abs() < 1e-10);
    }
}

#[test]
fn forced_energy_settles_into_a_band() {
    let traj = simulate(&SimConfig::forced(64)).unwrap();
    let e = &traj.energy;
    let tail = &e[e.len() / 2..];
    let mut running = Vec::with_capacity(tail.len());
    let mut acc = 0.0;
    for (i, v) in tail.iter().enumerate() {
        acc += v;
        running.push(acc / (i + 1) as f64);
    }
    let hi = running.iter().cloned().fold(f64::MIN, f64::max);
    let lo = running.iter().cloned().fold(f64::MAX, f64::min);
    assert!((hi - lo) / lo < 0.2, "running mean spans [{lo}, {hi}]");
    for f in &traj.frames {
        assert!(f.mean().abs() < 1e-10);
    }
}

#[test]
fn simulation_is_bit_identical() {
    let mut cfg = SimConfig::decaying(32);
    cfg.init = vortcast::dns::InitialCondition::McWilliams { k0: 4.0, tau0: 1.0, energy: 0.5 };
    cfg.steps = 100;
    cfg.seed = 42;
    let a = simulate(&cfg).unwrap();
    let b = simulate(&cfg).unwrap();
    for (x, y) in a.frames.iter().zip(&b.frames) {
        assert!(x.values().iter().zip(y.values()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

fn energy_spectrum_peak(n: usize, seed: u64) -> f64 {
    let w = mcwilliams_init(n, 6.0, 1.0, seed, 0.5).unwrap();
    let spec = fft2(&w).unwrap();
    let grid = wavenumber_grid(n).unwrap();
    let mut shells = vec![0.0; n];
    for (c, &k2) in spec.coeffs.iter().zip(&grid.k2) {
        if k2 > 0.0 {
            shells[shell_index(k2)] += c.norm_sqr() / k2;
        }
    }
    let (kmax, _) = shells.iter().enumerate().skip(1).max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    let (a, b, c) = (shells[kmax - 1], shells[kmax], shells[kmax + 1]);
    kmax as f64 + 0.5 * (a - c) / (a - 2.0 * b + c)
}

#[test]
fn mcwilliams_energy_peaks_near_k0() {
    for seed in 0..10 {
        let peak = energy_spectrum_peak(64, seed);
        assert!((4.0..=8.0).contains(&peak), "seed {seed}: peak {peak}");
    }
}

#[test]
fn mcwilliams_spectrum_follows_its_law() {
    let (n, k0, tau0) = (64usize, 6.0, 1.0);
    let w = mcwilliams_init(n, k0, tau0, 3, 0.5).unwrap();
    let curve = enstrophy_spectrum(&w).unwrap();
    let shells: Vec<usize> = (2..=20).collect();
    let logk: Vec<f64> = shells.iter().map(|&k| (k as f64).ln()).collect();
    let measured: Vec<f64> = shells.iter().map(|&k| curve.density[k].ln()).collect();
    let law: Vec<f64> = shells
        .iter()
        .map(|&k| {
            let k = k as f64;
            (k.powi(4) / (tau0 * tau0 + (k / k0).powi(4))).ln()
        })
        .collect();
    let (sm, sl) = (least_squares_slope(&logk, &measured), least_squares_slope(&logk, &law));
    assert!((sm - sl).abs() < 0.3, "measured slope {sm}, law slope {sl}");
}

#[test]
fn grf_ensemble_variance_law() {
    let (n, tau, alpha) = (32usize, 7.0, 2.5);
    let grid = wavenumber_grid(n).unwrap();
    let kmax = n / 2 - 1;
    let mut power = vec![0.0; kmax + 1];
    let mut count = vec![0usize; kmax + 1];
    for seed in 0..50 {
        let w = grf_init(n, tau, alpha, seed).unwrap();
        let spec = fft2(&w).unwrap();
        for (i, c) in spec.coeffs.iter().enumerate() {
            let k = shell_index(grid.k2[i]);
            if k >= 1 && k <= kmax && grid.kx[i].abs() < (n / 2) as f64 && grid.ky[i].abs() < (n / 2) as f64 {
                power[k] += c.norm_sqr();
                count[k] += 1;
            }
        }
    }
    let x: Vec<f64> = (1..=kmax).map(|k| ((k * k) as f64 + tau * tau).ln()).collect();
    let y: Vec<f64> = (1..=kmax).map(|k| (power[k] / count[k] as f64).ln()).collect();
    let slope = least_squares_slope(&x, &y);
    assert!((slope + alpha).abs() < 0.1 * alpha, "slope {slope}");
}
