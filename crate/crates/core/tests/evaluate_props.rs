use std::cell::Cell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vortcast::dns::{grf_init, simulate, Forcing, SimConfig, Solver};
use vortcast::evaluate::*;
use vortcast::field::VorticityField;
use vortcast::spectral::{enstrophy_spectrum, fft2, fft_freq, project_high, project_low};
use vortcast::Result;

fn smooth(n: usize, seed: u64, amp: f64) -> VorticityField {
    let f = grf_init(n, 3.0, 2.5, seed).unwrap();
    let s = amp / f.norm() * (n as f64);
    f.scale(s)
}

/// `‖P_high x‖` from the raw FFT via Parseval, without the projection helper.
fn high_norm_direct(x: &VorticityField, k_c: f64) -> f64 {
    let n = x.n();
    let spec = fft2(x).unwrap();
    let mut s = 0.0;
    for j in 0..n {
        for i in 0..n {
            let (kx, ky) = (fft_freq(i, n) as f64, fft_freq(j, n) as f64);
            if (kx * kx + ky * ky).sqrt() > k_c {
                s += spec.coeffs[j * n + i].norm_sqr();
            }
        }
    }
    (s / (n * n) as f64).sqrt()
}

#[test]
fn growth_of_pure_diffusion_matches_least_damped_high_mode() {
    let (n, nu, dt, k_c) = (32, 0.05, 1.0, 8.0);
    let solver = Solver::new(n, nu, Forcing::None).unwrap().without_nonlinearity();
    let step = |f: &VorticityField| solver.advance(f, dt, 1);
    let state = smooth(n, 1, 0.05);
    let est = estimate_growth_factor(&step, &state, k_c, &random_direction(n, 2), 400, 1e-13).unwrap();
    // smallest |k|² above 8 on the integer lattice is 8² + 1² = 65
    let expect = (-nu * 65.0 * dt).exp();
    assert!(est.converged, "{est:?}");
    assert!(((est.g_hat - expect) / expect).abs() < 1e-4, "{} vs {expect}", est.g_hat);
}

#[test]
fn growth_estimate_ignores_low_band_of_start_vector() {
    let n = 32;
    let solver = Solver::new(n, 0.02, Forcing::None).unwrap();
    let step = |f: &VorticityField| solver.advance(f, 0.01, 1);
    let state = smooth(n, 4, 1.0);
    let start = random_direction(n, 5);
    let low = project_low(&random_direction(n, 6), 8.0).unwrap().scale(50.0);
    let a = estimate_growth_factor(&step, &state, 8.0, &start, 12, 0.0).unwrap();
    let b = estimate_growth_factor(&step, &state, 8.0, &start.add(&low), 12, 0.0).unwrap();
    assert!(((a.g_hat - b.g_hat) / a.g_hat).abs() < 1e-8, "{} {}", a.g_hat, b.g_hat);
}

#[test]
fn growth_estimate_flags_non_convergence() {
    let n = 16;
    let unit = |f: VorticityField| {
        let norm = f.norm();
        f.scale(1.0 / norm)
    };
    let u1 = unit(VorticityField::from_fn(n, |x, _| (5.0 * x).cos()));
    let u2 = unit(VorticityField::from_fn(n, |_, y| (6.0 * y).sin()));
    // u1 -> 2·u2 -> u1: the gain alternates between 2 and 0.5
    let two_cycle = |x: &VorticityField| -> Result<VorticityField> { Ok(u2.scale(2.0 * u1.dot(x)).add(&u1.scale(0.5 * u2.dot(x)))) };
    let est = estimate_growth_factor(&two_cycle, &VorticityField::zeros(n), 4.0, &u1, 7, 1e-6).unwrap();
    assert!(!est.converged);
    assert_eq!(est.iterations, 7);
    assert!((est.g_hat - 2.0).abs() < 1e-6, "{est:?}");
    assert!((est.history[1] - 0.5).abs() < 1e-6);
}

fn high_unit(n: usize, seed: u64, k_c: f64) -> VorticityField {
    let v = project_high(&random_direction(n, seed), k_c).unwrap();
    let norm = v.norm();
    v.scale(1.0 / norm)
}

#[test]
fn constructed_linear_system_satisfies_bound_every_step() {
    let (n, g, delta, m, k_c) = (16, 1.2, 0.01, 50, 4.0);
    let truth = |x: &VorticityField| -> Result<VorticityField> { Ok(x.scale(g)) };
    let counter = Cell::new(0u64);
    let model = |x: &VorticityField| -> Result<VorticityField> {
        let k = counter.get();
        counter.set(k + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + k);
        let size: f64 = rng.gen_range(0.0..=1.0);
        // high-band part of norm ≤ δ plus an arbitrary low-band part
        let e = high_unit(n, 2000 + k, k_c).scale(delta * size).add(&project_low(&random_direction(n, 3000 + k), k_c).unwrap().scale(0.7));
        Ok(x.scale(g).add(&e))
    };
    let omega0 = smooth(n, 9, 1.0);
    let check = verify_bound(&truth, &model, &omega0, &omega0, k_c, m, g, delta).unwrap();
    assert_eq!(check.eps0, 0.0);
    assert_eq!(check.measured.len(), m);
    assert!(check.all_satisfied(), "{}", check.to_text());
    let closed = theorem_bound(g, delta, 0.0, m);
    assert!((check.bound[m - 1] - closed).abs() <= 1e-14 * closed);
}

#[test]
fn aligned_errors_attain_the_bound() {
    let (n, g, delta, m, k_c) = (16, 1.2, 0.01, 50, 4.0);
    let e = high_unit(n, 77, k_c).scale(delta);
    let truth = |x: &VorticityField| -> Result<VorticityField> { Ok(x.scale(g)) };
    let model = |x: &VorticityField| -> Result<VorticityField> { Ok(x.scale(g).add(&e)) };
    let omega0 = smooth(n, 3, 1.0);
    let check = verify_bound(&truth, &model, &omega0, &omega0, k_c, m, g, delta).unwrap();
    for (meas, b) in check.measured.iter().zip(&check.bound) {
        assert!((meas - b).abs() <= 1e-12 * b, "{meas} vs {b}");
    }
}

#[test]
fn zero_error_system_has_zero_bound() {
    let n = 16;
    let map = |x: &VorticityField| -> Result<VorticityField> { Ok(x.scale(1.1)) };
    let omega0 = smooth(n, 2, 1.0);
    let check = verify_bound(&map, &map, &omega0, &omega0, 4.0, 20, 1.1, 0.0).unwrap();
    assert!(check.measured.iter().all(|&v| v == 0.0));
    assert!(check.bound.iter().all(|&v| v == 0.0));
    assert!(check.all_satisfied());
}

#[test]
fn high_band_error_shrinks_as_cutoff_grows() {
    let n = 32;
    let solver = Solver::new(n, 1e-3, Forcing::None).unwrap();
    let truth = |x: &VorticityField| solver.advance(x, 0.01, 2);
    let model = |x: &VorticityField| solver.advance(x, 0.012, 2);
    let omega0 = smooth(n, 5, 2.0);
    let perturbed = omega0.add(&random_direction(n, 8).scale(0.1));
    let checks: Vec<BoundCheck> =
        [2.0, 4.0, 8.0, 12.0].iter().map(|&k_c| verify_bound(&truth, &model, &omega0, &perturbed, k_c, 10, 1.0, 0.0).unwrap()).collect();
    for pair in checks.windows(2) {
        for (a, b) in pair[0].measured.iter().zip(&pair[1].measured) {
            assert!(b <= &(a * (1.0 + 1e-12)), "{b} > {a}");
        }
    }
}

fn decaying_frames(n: usize, frames: usize) -> Vec<VorticityField> {
    let cfg = SimConfig { steps: (frames - 1) * 20, seed: 3, ..SimConfig::decaying(n) };
    simulate(&cfg).unwrap().frames
}

#[test]
fn identity_delta_hf_matches_direct_frame_differences() {
    let frames = decaying_frames(32, 8);
    let pairs: Vec<_> = frames.windows(2).map(|w| (vec![w[0].clone()], w[1].clone())).collect();
    let mut last = f64::INFINITY;
    for k_c in [2.0, 5.0, 8.0, 12.0] {
        let d = measure_delta_hf(&Persistence, &pairs, k_c).unwrap();
        let direct = frames.windows(2).map(|w| high_norm_direct(&w[1].sub(&w[0]), k_c)).fold(0.0, f64::max);
        assert!(((d.max - direct) / direct).abs() < 1e-12, "{} {direct}", d.max);
        assert!(d.median <= d.p90 && d.p90 <= d.max);
        assert!(d.max <= last * (1.0 + 1e-12));
        last = d.max;
    }
}

#[test]
fn persistence_error_grows_on_decaying_flow() {
    let frames = decaying_frames(32, 51);
    let rep = evaluate_trajectory(&Persistence, &frames, 50, 8.0, "persistence").unwrap();
    assert_eq!(rep.steps.len(), 50);
    assert!(rep.step(50).unwrap().rel_l2 > rep.step(1).unwrap().rel_l2);
}

#[test]
fn first_rollout_spectrum_equals_direct_prediction() {
    let frames = decaying_frames(32, 4);
    let solver = Solver::new(32, 5e-3, Forcing::None).unwrap();
    let model = FnStep(|f: &VorticityField| solver.advance(f, 0.01, 3));
    let rep = evaluate_trajectory(&model, &frames, 3, 8.0, "dns").unwrap();
    let direct = enstrophy_spectrum(&solver.advance(&frames[0], 0.01, 3).unwrap()).unwrap();
    for (a, b) in rep.step(1).unwrap().spectrum.density.iter().zip(&direct.density) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300));
    }
    let self_err = vortcast::spectral::normalized_spectral_error(&direct, &direct).unwrap();
    assert!(self_err.iter().flatten().all(|&e| e == 0.0));
}

#[test]
fn bound_is_monotone_in_each_argument() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..500 {
        let g = rng.gen_range(1.0..3.0);
        let d = rng.gen_range(0.0..1.0);
        let e = rng.gen_range(0.0..1.0);
        let m = rng.gen_range(0..40usize);
        let b = theorem_bound(g, d, e, m);
        assert!(theorem_bound(g + rng.gen_range(0.0..0.5), d, e, m) >= b * (1.0 - 1e-12));
        assert!(theorem_bound(g, d + rng.gen_range(0.0..0.5), e, m) >= b);
        assert!(theorem_bound(g, d, e + rng.gen_range(0.0..0.5), m) >= b);
        assert!(theorem_bound(g, d, e, m + 1) >= b);
    }
}

#[test]
fn l2_triangle_inequality() {
    for seed in 0..20 {
        let (a, b, c) = (smooth(16, seed, 1.0), smooth(16, seed + 100, 2.0), random_direction(16, seed));
        let lhs = l2_error(&a, &c).unwrap();
        let rhs = l2_error(&a, &b).unwrap() + l2_error(&b, &c).unwrap();
        assert!(lhs <= rhs * (1.0 + 1e-14));
    }
}
