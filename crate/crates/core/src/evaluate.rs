//! Autoregressive rollout, field metrics, and the high-frequency error
//! accumulation probe (growth factor, single-step error, bound).

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::datasets::Normalization;
use crate::error::{Error, Result};
use crate::field::VorticityField;
use crate::io::fmt_sig;
use crate::model::Model;
use crate::spectral::{enstrophy_spectrum, normalized_spectral_error, project_high, SpectrumCurve};
use crate::tensor::Tensor;
use crate::training::Checkpoint;

/// Relative L² above which a rollout is declared diverged.
pub const DIVERGENCE_REL_L2: f64 = 10.0;
pub const SSIM_WINDOW: usize = 7;

/// One-step map on physical-unit fields.
pub trait StepModel {
    /// Number of past frames consumed, oldest first.
    fn history(&self) -> usize {
        1
    }

    fn step(&self, frames: &[VorticityField]) -> Result<VorticityField>;
}

/// Returns the most recent frame unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct Persistence;

impl StepModel for Persistence {
    fn step(&self, frames: &[VorticityField]) -> Result<VorticityField> {
        frames.last().cloned().ok_or_else(|| Error::InvalidArgument("no input frame".into()))
    }
}

/// Adapts a closure on single frames.
pub struct FnStep<F>(pub F);

impl<F: Fn(&VorticityField) -> Result<VorticityField>> StepModel for FnStep<F> {
    fn step(&self, frames: &[VorticityField]) -> Result<VorticityField> {
        (self.0)(frames.last().ok_or_else(|| Error::InvalidArgument("no input frame".into()))?)
    }
}

/// A trained network with the normalization of its training data.
#[derive(Clone, Debug)]
pub struct Surrogate {
    pub model: Model,
    pub normalization: Normalization,
}

impl Surrogate {
    pub fn new(model: Model, normalization: Normalization) -> Self {
        Self { model, normalization }
    }
}

impl From<Checkpoint> for Surrogate {
    fn from(c: Checkpoint) -> Self {
        Self { model: c.model, normalization: c.normalization }
    }
}

impl StepModel for Surrogate {
    fn history(&self) -> usize {
        self.model.config().in_channels
    }

    fn step(&self, frames: &[VorticityField]) -> Result<VorticityField> {
        let h = self.history();
        if frames.len() != h {
            return Err(Error::InvalidArgument(format!("model consumes {h} frames, got {}", frames.len())));
        }
        let n = frames[0].n();
        let mut data = Vec::with_capacity(h * n * n);
        for f in frames {
            data.extend(f.values().iter().map(|&v| self.normalization.normalize(v)));
        }
        let y = self.model.predict(&Tensor::new(vec![1, h, n, n], data)?)?;
        let values = y.data().iter().map(|&v| self.normalization.denormalize(v)).collect();
        Ok(VorticityField::new(n, values)?.with_time(frames[h - 1].time))
    }
}

#[derive(Clone, Debug)]
pub struct Rollout {
    pub frames: Vec<VorticityField>,
    /// Step at which a non-finite state appeared; that state is not kept.
    pub diverged_at: Option<usize>,
}

/// Feed predictions back `m` times starting from `initial` (the model's history).
pub fn rollout(model: &dyn StepModel, initial: &[VorticityField], m: usize) -> Result<Rollout> {
    let h = model.history();
    if initial.len() < h {
        return Err(Error::InvalidArgument(format!("rollout needs {h} initial frames, got {}", initial.len())));
    }
    let mut window: Vec<VorticityField> = initial[initial.len() - h..].to_vec();
    let mut frames = Vec::with_capacity(m);
    for k in 1..=m {
        let next = model.step(&window)?;
        if !next.is_finite() {
            return Ok(Rollout { frames, diverged_at: Some(k) });
        }
        window.remove(0);
        window.push(next.clone());
        frames.push(next);
    }
    Ok(Rollout { frames, diverged_at: None })
}

fn check_same(a: &VorticityField, b: &VorticityField) -> Result<()> {
    if a.n() != b.n() {
        return Err(Error::Shape(format!("fields have sizes {} and {}", a.n(), b.n())));
    }
    Ok(())
}

/// `√Σ(pred − gt)²` over all grid points.
pub fn l2_error(pred: &VorticityField, gt: &VorticityField) -> Result<f64> {
    check_same(pred, gt)?;
    Ok(pred.values().iter().zip(gt.values()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}

pub fn relative_l2(pred: &VorticityField, gt: &VorticityField) -> Result<f64> {
    let denom = gt.norm();
    if denom == 0.0 {
        return Err(Error::InvalidArgument("relative L2 against an all-zero ground truth".into()));
    }
    Ok(l2_error(pred, gt)? / denom)
}

/// Windowed SSIM with the data range taken from `gt` (1 when `gt` is constant).
pub fn ssim(pred: &VorticityField, gt: &VorticityField) -> Result<f64> {
    let (lo, hi) = gt.values().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let range = if hi > lo { hi - lo } else { 1.0 };
    ssim_with_range(pred, gt, range)
}

/// Mean over all fully contained 7×7 windows of
/// `(2μaμb + c1)(2σab + c2) / ((μa² + μb² + c1)(σa² + σb² + c2))`
/// with population moments, `c1 = (0.01R)²`, `c2 = (0.03R)²`.
pub fn ssim_with_range(a: &VorticityField, b: &VorticityField, range: f64) -> Result<f64> {
    check_same(a, b)?;
    let n = a.n();
    if n < SSIM_WINDOW {
        return Err(Error::Shape(format!("SSIM needs at least {SSIM_WINDOW}×{SSIM_WINDOW} samples, got {n}×{n}")));
    }
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let (x, y) = (a.values(), b.values());
    let count = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let positions = n - SSIM_WINDOW + 1;
    let mut total = 0.0;
    for r0 in 0..positions {
        for c0 in 0..positions {
            let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for r in r0..r0 + SSIM_WINDOW {
                for c in c0..c0 + SSIM_WINDOW {
                    let (u, v) = (x[r * n + c], y[r * n + c]);
                    sx += u;
                    sy += v;
                    sxx += u * u;
                    syy += v * v;
                    sxy += u * v;
                }
            }
            let (mx, my) = (sx / count, sy / count);
            let vx = sxx / count - mx * mx;
            let vy = syy / count - my * my;
            let cxy = sxy / count - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    Ok(total / (positions * positions) as f64)
}

/// Norm of the high-pass part of `pred − gt`.
pub fn high_band_error(pred: &VorticityField, gt: &VorticityField, k_c: f64) -> Result<f64> {
    check_same(pred, gt)?;
    Ok(project_high(&pred.sub(gt), k_c)?.norm())
}

#[derive(Clone, Debug)]
pub struct StepRecord {
    pub step: usize,
    pub l2: f64,
    pub rel_l2: f64,
    pub ssim: f64,
    pub eps_high: f64,
    pub spectrum: SpectrumCurve,
    pub gt_spectrum: SpectrumCurve,
    pub spectral_error: Vec<Option<f64>>,
}

impl StepRecord {
    /// Mean `|normalized spectral error|` over present shells with `k > k_min`.
    pub fn mean_abs_spectral_error_above(&self, k_min: f64) -> Option<f64> {
        let vals: Vec<f64> = self
            .spectrum
            .k_bins
            .iter()
            .zip(&self.spectral_error)
            .filter(|(&k, _)| k as f64 > k_min)
            .filter_map(|(_, e)| e.map(f64::abs))
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

#[derive(Clone, Debug)]
pub struct RolloutReport {
    pub label: String,
    pub k_c: f64,
    pub steps: Vec<StepRecord>,
    pub diverged_at: Option<usize>,
}

impl RolloutReport {
    pub fn step(&self, k: usize) -> Option<&StepRecord> {
        self.steps.get(k.checked_sub(1)?)
    }

    pub fn mean_rel_l2(&self) -> f64 {
        if self.steps.is_empty() {
            return f64::NAN;
        }
        self.steps.iter().map(|s| s.rel_l2).sum::<f64>() / self.steps.len() as f64
    }
}

/// Roll `model` out from the head of `gt` and score `m` steps against it.
pub fn evaluate_trajectory(model: &dyn StepModel, gt: &[VorticityField], m: usize, k_c: f64, label: &str) -> Result<RolloutReport> {
    let h = model.history();
    if gt.len() < h + m {
        return Err(Error::InvalidArgument(format!(
            "ground truth holds {} frames, {m} steps from {h} initial frames need {}",
            gt.len(),
            h + m
        )));
    }
    let mut report = RolloutReport { label: label.to_string(), k_c, steps: Vec::with_capacity(m), diverged_at: None };
    let mut window: Vec<VorticityField> = gt[..h].to_vec();
    for k in 1..=m {
        let pred = model.step(&window)?;
        if !pred.is_finite() {
            report.diverged_at = Some(k);
            break;
        }
        let truth = &gt[h - 1 + k];
        let spectrum = enstrophy_spectrum(&pred)?;
        let gt_spectrum = enstrophy_spectrum(truth)?;
        let record = StepRecord {
            step: k,
            l2: l2_error(&pred, truth)?,
            rel_l2: relative_l2(&pred, truth)?,
            ssim: ssim(&pred, truth)?,
            eps_high: high_band_error(&pred, truth, k_c)?,
            spectral_error: normalized_spectral_error(&spectrum, &gt_spectrum)?,
            spectrum,
            gt_spectrum,
        };
        let blown = record.rel_l2.is_nan() || record.rel_l2 > DIVERGENCE_REL_L2;
        report.steps.push(record);
        if blown {
            report.diverged_at = Some(k);
            break;
        }
        window.remove(0);
        window.push(pred);
    }
    Ok(report)
}

/// Dominant gain of `v ↦ P_high J P_high v` by power iteration.
#[derive(Clone, Debug)]
pub struct GrowthEstimate {
    pub g_hat: f64,
    pub converged: bool,
    pub iterations: usize,
    pub history: Vec<f64>,
}

/// Unit-norm Gaussian direction.
pub fn random_direction(n: usize, seed: u64) -> VorticityField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = VorticityField::new(n, (0..n * n).map(|_| StandardNormal.sample(&mut rng)).collect()).expect("n*n values");
    let norm = v.norm();
    v.scale(1.0 / norm)
}

/// Jacobian-vector products are forward differences with
/// `h = 1e-5·‖state‖/‖v‖` (`1e-5/‖v‖` at the zero state). Stops once two
/// successive gains agree to `tol` relative, otherwise after `iters`.
pub fn estimate_growth_factor(
    step_map: &dyn Fn(&VorticityField) -> Result<VorticityField>,
    state: &VorticityField,
    k_c: f64,
    start: &VorticityField,
    iters: usize,
    tol: f64,
) -> Result<GrowthEstimate> {
    check_same(state, start)?;
    if iters == 0 {
        return Err(Error::InvalidArgument("power iteration needs at least one iteration".into()));
    }
    let base = step_map(state)?;
    let mut v = project_high(start, k_c)?;
    let vn = v.norm();
    if vn == 0.0 {
        return Err(Error::InvalidArgument("start direction has no component above the cutoff".into()));
    }
    v = v.scale(1.0 / vn);
    let scale = if state.norm() > 0.0 { state.norm() } else { 1.0 };
    let mut history = Vec::with_capacity(iters);
    for it in 1..=iters {
        let h = 1e-5 * scale;
        let bumped = step_map(&state.add(&v.scale(h)))?;
        let jv = bumped.sub(&base).scale(1.0 / h);
        let w = project_high(&jv, k_c)?;
        let gain = w.norm();
        history.push(gain);
        if gain == 0.0 || !gain.is_finite() {
            return Ok(GrowthEstimate { g_hat: gain, converged: gain == 0.0, iterations: it, history });
        }
        if it > 1 {
            let prev = history[it - 2];
            if (gain - prev).abs() <= tol * gain {
                return Ok(GrowthEstimate { g_hat: gain, converged: true, iterations: it, history });
            }
        }
        v = w.scale(1.0 / gain);
    }
    Ok(GrowthEstimate { g_hat: *history.last().expect("iters > 0"), converged: false, iterations: iters, history })
}

#[derive(Clone, Debug)]
pub struct DeltaHf {
    pub max: f64,
    pub median: f64,
    pub p90: f64,
    pub values: Vec<f64>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// `max ‖P_high(F(inputs) − target)‖` over ground-truth pairs.
pub fn measure_delta_hf(model: &dyn StepModel, pairs: &[(Vec<VorticityField>, VorticityField)], k_c: f64) -> Result<DeltaHf> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no pairs to measure".into()));
    }
    let values = pairs.iter().map(|(inputs, target)| high_band_error(&model.step(inputs)?, target, k_c)).collect::<Result<Vec<f64>>>()?;
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(DeltaHf { max: sorted[sorted.len() - 1], median: quantile(&sorted, 0.5), p90: quantile(&sorted, 0.9), values })
}

/// `G^M·ε0 + δ(G^M − 1)/(G − 1)`, and `ε0 + Mδ` at `G = 1`.
pub fn theorem_bound(g: f64, delta: f64, eps0: f64, m: usize) -> f64 {
    if g == 1.0 {
        return eps0 + m as f64 * delta;
    }
    let gm = g.powi(m as i32);
    gm * eps0 + delta * (gm - 1.0) / (g - 1.0)
}

/// Absolute slack allowed when comparing a measured error to its bound.
pub const BOUND_SLACK: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct BoundCheck {
    pub k_c: f64,
    pub g_hat: f64,
    pub delta_hf: f64,
    pub eps0: f64,
    /// `measured[k-1]` is `‖P_high(ω̂_k − ω*_k)‖`.
    pub measured: Vec<f64>,
    pub bound: Vec<f64>,
    pub satisfied: Vec<bool>,
}

impl BoundCheck {
    pub fn all_satisfied(&self) -> bool {
        self.satisfied.iter().all(|&s| s)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "k_c = {}", fmt_sig(self.k_c));
        let _ = writeln!(s, "g_hat = {}", fmt_sig(self.g_hat));
        let _ = writeln!(s, "delta_hf = {}", fmt_sig(self.delta_hf));
        let _ = writeln!(s, "eps0 = {}", fmt_sig(self.eps0));
        let _ = writeln!(s, "all_satisfied = {}", self.all_satisfied());
        let _ = writeln!(s, "step,measured,bound,satisfied");
        for (k, ((m, b), ok)) in self.measured.iter().zip(&self.bound).zip(&self.satisfied).enumerate() {
            let _ = writeln!(s, "{},{},{},{}", k + 1, fmt_sig(*m), fmt_sig(*b), ok);
        }
        s
    }
}

/// Run `truth` and `model` side by side for `m` steps and compare the
/// high-band error with the accumulated bound built from `g_hat` and `delta_hf`.
#[allow(clippy::too_many_arguments)]
pub fn verify_bound(
    truth: &dyn Fn(&VorticityField) -> Result<VorticityField>,
    model: &dyn Fn(&VorticityField) -> Result<VorticityField>,
    omega0_true: &VorticityField,
    omega0_model: &VorticityField,
    k_c: f64,
    m: usize,
    g_hat: f64,
    delta_hf: f64,
) -> Result<BoundCheck> {
    let eps0 = high_band_error(omega0_model, omega0_true, k_c)?;
    let (mut x, mut y) = (omega0_true.clone(), omega0_model.clone());
    let mut out = BoundCheck {
        k_c,
        g_hat,
        delta_hf,
        eps0,
        measured: Vec::with_capacity(m),
        bound: Vec::with_capacity(m),
        satisfied: Vec::with_capacity(m),
    };
    for k in 1..=m {
        x = truth(&x)?;
        y = model(&y)?;
        let e = high_band_error(&y, &x, k_c)?;
        let b = theorem_bound(g_hat, delta_hf, eps0, k);
        out.measured.push(e);
        out.bound.push(b);
        out.satisfied.push(e <= b + BOUND_SLACK);
    }
    Ok(out)
}

/// Estimated quantities of the accumulation bound for one model.
#[derive(Clone, Debug)]
pub struct TheoremProbe {
    pub k_c: f64,
    pub growth: GrowthEstimate,
    pub delta: DeltaHf,
    pub eps0: f64,
}

impl TheoremProbe {
    pub fn bound(&self, m: usize) -> f64 {
        theorem_bound(self.growth.g_hat, self.delta.max, self.eps0, m)
    }

    pub fn to_text(&self, horizons: &[usize]) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "k_c = {}", fmt_sig(self.k_c));
        let _ = writeln!(s, "g_hat = {}", fmt_sig(self.growth.g_hat));
        let _ = writeln!(s, "g_hat_converged = {}", self.growth.converged);
        let _ = writeln!(s, "g_hat_iterations = {}", self.growth.iterations);
        let _ = writeln!(s, "delta_hf = {}", fmt_sig(self.delta.max));
        let _ = writeln!(s, "delta_hf_median = {}", fmt_sig(self.delta.median));
        let _ = writeln!(s, "delta_hf_p90 = {}", fmt_sig(self.delta.p90));
        let _ = writeln!(s, "eps0 = {}", fmt_sig(self.eps0));
        for &m in horizons {
            let _ = writeln!(s, "bound_{m} = {}", fmt_sig(self.bound(m)));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave(n: usize, kx: f64, ky: f64, a: f64) -> VorticityField {
        VorticityField::from_fn(n, |x, y| a * (kx * x + ky * y).sin())
    }

    #[test]
    fn l2_cases() {
        let ones = VorticityField::new(2, vec![1.0; 4]).unwrap();
        assert_eq!(l2_error(&ones, &VorticityField::zeros(2)).unwrap(), 2.0);
        assert_eq!(l2_error(&ones, &ones).unwrap(), 0.0);
        assert!(l2_error(&ones, &VorticityField::zeros(4)).is_err());
    }

    #[test]
    fn relative_l2_cases() {
        let g = wave(8, 1.0, 2.0, 1.5).add(&VorticityField::new(8, vec![0.3; 64]).unwrap());
        assert_eq!(relative_l2(&g, &g).unwrap(), 0.0);
        assert_eq!(relative_l2(&VorticityField::zeros(8), &g).unwrap(), 1.0);
        assert!((relative_l2(&g.scale(2.0), &g).unwrap() - 1.0).abs() < 1e-15);
        assert!(relative_l2(&g, &VorticityField::zeros(8)).is_err());
        let p = wave(8, 3.0, 0.0, 0.4);
        let r = relative_l2(&p, &g).unwrap();
        assert!((relative_l2(&p.scale(-3.5), &g.scale(-3.5)).unwrap() - r).abs() < 1e-14);
    }

    #[test]
    fn ssim_identity_and_luminance_oracle() {
        let x = wave(16, 2.0, 1.0, 1.0).add(&wave(16, 5.0, 3.0, 0.2));
        assert_eq!(ssim(&x, &x).unwrap(), 1.0);
        let (a, b) = (0.7, 0.2);
        let pa = VorticityField::new(16, vec![a; 256]).unwrap();
        let pb = VorticityField::new(16, vec![b; 256]).unwrap();
        let c1 = 0.01f64.powi(2);
        let expect = (2.0 * a * b + c1) / (a * a + b * b + c1);
        assert!((ssim(&pa, &pb).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn ssim_symmetric_and_bounded() {
        let a = wave(12, 1.0, 1.0, 1.0);
        let b = wave(12, 1.0, 2.0, 0.5).add(&a.scale(0.3));
        let r = 1.7;
        let (ab, ba) = (ssim_with_range(&a, &b, r).unwrap(), ssim_with_range(&b, &a, r).unwrap());
        assert!((ab - ba).abs() < 1e-12);
        assert!(ab < 1.0 && ab > -1.0);
        assert!(ssim(&VorticityField::zeros(4), &VorticityField::zeros(4)).is_err());
    }

    #[test]
    fn rollout_edge_cases() {
        let x = wave(8, 1.0, 0.0, 1.0);
        assert!(rollout(&Persistence, std::slice::from_ref(&x), 0).unwrap().frames.is_empty());
        let r = rollout(&Persistence, std::slice::from_ref(&x), 4).unwrap();
        assert!(r.frames.iter().all(|f| f.values() == x.values()));
        let blow = FnStep(|f: &VorticityField| Ok(f.scale(f64::INFINITY)));
        let r = rollout(&blow, &[x], 3).unwrap();
        assert_eq!(r.diverged_at, Some(1));
    }

    #[test]
    fn persistence_on_constant_trajectory_is_exact() {
        let x = wave(16, 2.0, 3.0, 1.0);
        let gt = vec![x; 6];
        let rep = evaluate_trajectory(&Persistence, &gt, 5, 4.0, "const").unwrap();
        assert_eq!(rep.steps.len(), 5);
        for s in &rep.steps {
            assert_eq!(s.rel_l2, 0.0);
            assert_eq!(s.ssim, 1.0);
            assert!(s.spectral_error.iter().flatten().all(|&e| e == 0.0));
        }
        assert!(evaluate_trajectory(&Persistence, &gt_short(), 5, 4.0, "x").is_err());
    }

    fn gt_short() -> Vec<VorticityField> {
        vec![VorticityField::zeros(8); 3]
    }

    #[test]
    fn divergence_is_marked() {
        let x = wave(8, 1.0, 0.0, 1.0);
        let grow = FnStep(|f: &VorticityField| Ok(f.scale(5.0)));
        let rep = evaluate_trajectory(&grow, &vec![x; 10], 9, 2.0, "g").unwrap();
        assert_eq!(rep.diverged_at, Some(2));
        assert_eq!(rep.steps.len(), 2);
    }

    #[test]
    fn bound_closed_forms() {
        assert_eq!(theorem_bound(2.0, 1.0, 0.0, 3), 7.0);
        assert_eq!(theorem_bound(1.0, 0.01, 0.1, 10), 0.2);
        assert_eq!(theorem_bound(1.3, 0.0, 0.25, 6), 1.3f64.powi(6) * 0.25);
        assert_eq!(theorem_bound(1.5, 0.2, 0.3, 0), 0.3);
    }

    #[test]
    fn growth_of_linear_map_is_its_factor() {
        let state = wave(16, 1.0, 1.0, 1.0);
        for c in [0.5, 1.2, -2.0] {
            let est =
                estimate_growth_factor(&|f: &VorticityField| Ok(f.scale(c)), &state, 4.0, &random_direction(16, 3), 50, 1e-12).unwrap();
            assert!((est.g_hat - c.abs()).abs() < 1e-6, "{c}: {est:?}");
        }
    }

    #[test]
    fn delta_hf_of_perfect_model_is_zero() {
        let frames: Vec<VorticityField> = (0..4).map(|i| wave(16, 5.0, 2.0, 1.0 + i as f64)).collect();
        let pairs: Vec<_> = frames.windows(2).map(|w| (vec![w[0].clone()], w[1].clone())).collect();
        let next = |f: &VorticityField| -> Result<VorticityField> {
            let i = frames.iter().position(|g| g.values() == f.values()).unwrap();
            Ok(frames[i + 1].clone())
        };
        let d = measure_delta_hf(&FnStep(next), &pairs, 4.0).unwrap();
        assert_eq!(d.max, 0.0);
    }
}
