//! Reusable correctness probes: per-op gradient checks, a composed-model
//! gradient check, solver and spectral identities, and the exact metric unit
//! cases. The `gradcheck` and `selftest` subcommands and the acceptance suite
//! all run these.

use std::cell::Cell as Counter;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dns::{grf_init, simulate, Forcing, InitialCondition, SimConfig, Solver};
use crate::error::Result;
use crate::evaluate::{l2_error, random_direction, relative_l2, ssim, theorem_bound, verify_bound, BoundCheck};
use crate::field::VorticityField;
use crate::model::{HdsConfig, Model, ModelConfig};
use crate::spectral::{default_cutoff, enstrophy, enstrophy_spectrum, fft2, normalized_spectral_error, project_high, project_low};
use crate::tensor::{grad_check, grad_check_piecewise, Activation, Conv2dCfg, ConvTranspose2dCfg, GradCheckReport, Graph, Tensor, Var};

pub const OP_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;
pub const FD_EPS: f64 = 1e-5;

type OpFn = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

/// One differentiable op under test: its inputs and a scalar-valued closure.
pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub op: OpFn,
}

/// `Σ r ⊙ y` with a fixed random `r`, so every output coordinate matters.
fn probe(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_5A5A);
    let r = Tensor::randn(g.value(y).shape(), 1.0, &mut rng);
    let rv = g.constant(r);
    let p = g.mul(y, rv)?;
    Ok(g.sum(p))
}

fn conv_case(name: &'static str, seed: u64, x: &[usize], w: &[usize], bias: bool, cfg: Conv2dCfg) -> OpCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = vec![Tensor::randn(x, 1.0, &mut rng), Tensor::randn(w, 0.5, &mut rng)];
    if bias {
        inputs.push(Tensor::randn(&[w[0]], 0.5, &mut rng));
    }
    OpCase {
        name,
        inputs,
        op: Box::new(move |g, v| {
            let y = g.conv2d(v[0], v[1], v.get(2).copied(), cfg)?;
            probe(g, y, seed)
        }),
    }
}

/// Every primitive of the tensor engine, instantiated for `seed`.
pub fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(7919).wrapping_add(1));
    let mut randn = |shape: &[usize]| Tensor::randn(shape, 1.0, &mut rng);
    let mut cases = vec![
        conv_case("conv2d", seed, &[2, 3, 6, 6], &[4, 3, 3, 3], true, Conv2dCfg::new(1, 1)),
        conv_case("conv2d_strided", seed, &[1, 2, 7, 7], &[3, 2, 3, 3], true, Conv2dCfg::new(2, 1)),
        conv_case("conv2d_dilated", seed, &[1, 2, 8, 8], &[2, 2, 3, 3], false, Conv2dCfg::new(1, 2).dilation(2)),
        conv_case("conv2d_grouped", seed, &[1, 4, 5, 5], &[6, 2, 3, 3], true, Conv2dCfg::new(1, 1).groups(2)),
        conv_case("depthwise_strided", seed, &[2, 3, 7, 7], &[3, 1, 3, 3], true, Conv2dCfg::new(2, 1).groups(3)),
        conv_case("depthwise_dilated", seed, &[1, 3, 9, 9], &[3, 1, 5, 5], true, Conv2dCfg::new(1, 4).groups(3).dilation(2)),
        conv_case("pointwise", seed, &[2, 3, 4, 4], &[5, 3, 1, 1], true, Conv2dCfg::new(1, 0)),
    ];
    cases.push(OpCase {
        name: "conv_transpose2d",
        inputs: vec![randn(&[1, 3, 4, 4]), randn(&[3, 2, 3, 3]), randn(&[2])],
        op: Box::new(move |g, v| {
            let y = g.conv_transpose2d(v[0], v[1], Some(v[2]), ConvTranspose2dCfg::new(2, 1, 1))?;
            probe(g, y, seed)
        }),
    });
    cases.push(OpCase {
        name: "group_norm",
        inputs: vec![randn(&[2, 4, 3, 3]), randn(&[4]), randn(&[4])],
        op: Box::new(move |g, v| {
            let y = g.group_norm(v[0], 2, v[1], v[2], 1e-5)?;
            probe(g, y, seed)
        }),
    });
    cases.push(OpCase {
        name: "layer_norm",
        inputs: vec![randn(&[2, 5, 6]), randn(&[6]), randn(&[6])],
        op: Box::new(move |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
            probe(g, y, seed)
        }),
    });
    for (name, kind) in [("leaky_relu", Activation::DEFAULT_LEAKY), ("gelu", Activation::Gelu)] {
        // keep samples off the kink at zero
        let x = randn(&[3, 7]).map(|v| if v.abs() < 1e-2 { v + 0.1 } else { v });
        cases.push(OpCase {
            name,
            inputs: vec![x],
            op: Box::new(move |g, v| {
                let y = g.activation(v[0], kind);
                probe(g, y, seed)
            }),
        });
    }
    cases.push(OpCase {
        name: "add",
        inputs: vec![randn(&[2, 3, 4]), randn(&[2, 3, 4])],
        op: Box::new(move |g, v| {
            let y = g.add(v[0], v[1])?;
            probe(g, y, seed)
        }),
    });
    cases.push(OpCase {
        name: "sub",
        inputs: vec![randn(&[2, 3, 4]), randn(&[2, 3, 4])],
        op: Box::new(move |g, v| {
            let y = g.sub(v[0], v[1])?;
            probe(g, y, seed)
        }),
    });
    cases.push(OpCase {
        name: "mul",
        inputs: vec![randn(&[2, 3, 4]), randn(&[2, 3, 4])],
        op: Box::new(move |g, v| {
            let y = g.mul(v[0], v[1])?;
            probe(g, y, seed)
        }),
    });
    cases.push(OpCase {
        name: "scale",
        inputs: vec![randn(&[5])],
        op: Box::new(move |g, v| {
            let y = g.scale(v[0], -1.7);
            probe(g, y, seed)
        }),
    });
    cases.push(OpCase {
        name: "scale_axis",
        inputs: vec![randn(&[2, 3, 4, 4]), randn(&[3])],
        op: Box::new(move |g, v| {
            let y = g.scale_axis(v[0], v[1], 1)?;
            probe(g, y, seed)
        }),
    });
    cases.push(OpCase {
        name: "layer_scale_residual",
        inputs: vec![randn(&[1, 5, 3]), randn(&[1, 5, 3]), randn(&[3])],
        op: Box::new(move |g, v| {
            let y = g.layer_scale_residual(v[0], v[1], v[2], 2)?;
            probe(g, y, seed)
        }),
    });
    cases.push(OpCase {
        name: "concat",
        inputs: vec![randn(&[2, 2, 3, 3]), randn(&[2, 3, 3, 3])],
        op: Box::new(move |g, v| {
            let y = g.concat(&[v[0], v[1]])?;
            probe(g, y, seed)
        }),
    });
    cases.push(OpCase {
        name: "to_tokens",
        inputs: vec![randn(&[2, 3, 2, 4])],
        op: Box::new(move |g, v| {
            let y = g.to_tokens(v[0])?;
            probe(g, y, seed)
        }),
    });
    cases.push(OpCase {
        name: "from_tokens",
        inputs: vec![randn(&[2, 8, 3])],
        op: Box::new(move |g, v| {
            let y = g.from_tokens(v[0], 2, 4)?;
            probe(g, y, seed)
        }),
    });
    cases.push(OpCase {
        name: "linear",
        inputs: vec![randn(&[2, 5, 4]), randn(&[3, 4]), randn(&[3])],
        op: Box::new(move |g, v| {
            let y = g.linear(v[0], v[1], Some(v[2]))?;
            probe(g, y, seed)
        }),
    });
    cases.push(OpCase {
        name: "attention",
        inputs: vec![randn(&[2, 6, 4]), randn(&[4, 4]), randn(&[4, 4]), randn(&[4, 4]), randn(&[4, 4])],
        op: Box::new(move |g, v| {
            let y = g.attention(v[0], v[1], v[2], v[3], v[4], 2)?;
            probe(g, y, seed)
        }),
    });
    cases.push(OpCase {
        name: "softmax",
        inputs: vec![randn(&[5])],
        op: Box::new(move |g, v| {
            let y = g.softmax(v[0])?;
            probe(g, y, seed)
        }),
    });
    cases.push(OpCase {
        name: "weighted_sum",
        inputs: vec![randn(&[2, 3]), randn(&[2, 3]), randn(&[2, 3]), randn(&[3])],
        op: Box::new(move |g, v| {
            let y = g.weighted_sum(&v[..3], v[3])?;
            probe(g, y, seed)
        }),
    });
    cases.push(OpCase {
        name: "sum",
        inputs: vec![randn(&[4, 4])],
        op: Box::new(|g, v| {
            let sq = g.mul(v[0], v[0])?;
            Ok(g.sum(sq))
        }),
    });
    cases.push(OpCase { name: "mse", inputs: vec![randn(&[3, 4]), randn(&[3, 4])], op: Box::new(|g, v| g.mse(v[0], v[1])) });
    cases
}

#[derive(Clone, Debug)]
pub struct OpCheck {
    pub op: &'static str,
    pub seed: u64,
    pub report: GradCheckReport,
}

/// Gradient-check every op case for each seed, all coordinates.
pub fn run_op_checks(seeds: &[u64]) -> Result<Vec<OpCheck>> {
    let mut out = Vec::new();
    for &seed in seeds {
        for case in op_cases(seed) {
            let report = grad_check(&case.op, &case.inputs, FD_EPS, None)?;
            out.push(OpCheck { op: case.name, seed, report });
        }
    }
    Ok(out)
}

/// Small full-variant model with every path active; one norm group keeps
/// conv biases visible to the loss.
pub const COMPOSED_COORDS_PER_TENSOR: usize = 20;

/// Every stage and block of the default architecture at reduced widths.
/// The layer scales start at 0.3 so the residual branches carry gradient.
pub fn composed_check_config(seed: u64) -> ModelConfig {
    ModelConfig {
        n: 16,
        widths: vec![4, 8, 8],
        norm_groups: 2,
        hds: HdsConfig { heads: 2, layer_scale_init: 0.3, ..HdsConfig::default() },
        seed,
        ..ModelConfig::default()
    }
}

/// Finite-difference check of forward pass plus MSE on a 1x1x16x16 input,
/// sampling coordinates of every parameter tensor.
pub fn composed_model_check(seed: u64) -> Result<GradCheckReport> {
    let model = Model::new(composed_check_config(seed))?;
    let n = model.config().n;
    let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
    let x = Tensor::randn(&[1, 1, n, n], 1.0, &mut rng);
    let target = Tensor::randn(&[1, 1, n, n], 1.0, &mut rng);
    let eval = |params: &[Tensor], grad: bool| -> Result<(f64, Vec<bool>, Option<Vec<Tensor>>)> {
        let mut m = model.clone();
        m.params_mut().tensors_mut().clone_from_slice(params);
        let mut g = Graph::new();
        let p = m.params().bind(&mut g, grad);
        let xv = g.constant(x.clone());
        let y = m.forward(&mut g, &p, xv)?;
        let tv = g.constant(target.clone());
        let loss = g.mse(y, tv)?;
        let value = g.value(loss).data()[0];
        let kinks = g.kink_pattern();
        if !grad {
            return Ok((value, kinks, None));
        }
        let gr = g.backward(loss)?;
        let grads = p.vars().iter().map(|&v| gr.get(v).cloned().unwrap_or_else(|| Tensor::zeros(g.value(v).shape()))).collect();
        Ok((value, kinks, Some(grads)))
    };
    let params = model.params().tensors().to_vec();
    let analytic = eval(&params, true)?.2.expect("requested");
    let value = |ps: &[Tensor]| eval(ps, false).map(|(v, k, _)| (v, k));
    grad_check_piecewise(value, &analytic, &params, FD_EPS, Some((COMPOSED_COORDS_PER_TENSOR, seed)))
}

/// Bound check on `x_{k+1} = G·x_k + e_k`, where each `e_k` has a random
/// high-band part of norm at most `δ` and an arbitrary low-band part. Truth
/// is `x ↦ G·x`; both start from the same smooth field, so `eps0 = 0`.
pub fn constructed_bound_check(n: usize, g: f64, delta: f64, m: usize, k_c: f64, seed: u64) -> Result<BoundCheck> {
    use rand::Rng;
    let truth = |x: &VorticityField| -> Result<VorticityField> { Ok(x.scale(g)) };
    let calls = Counter::new(0u64);
    let model = |x: &VorticityField| -> Result<VorticityField> {
        let k = calls.get();
        calls.set(k + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(k));
        let size: f64 = rng.gen_range(0.0..=1.0);
        let high = project_high(&random_direction(n, rng.gen()), k_c)?;
        let low = project_low(&random_direction(n, rng.gen()), k_c)?;
        let e = high.scale(delta * size / high.norm()).add(&low.scale(rng.gen_range(0.0..2.0)));
        Ok(x.scale(g).add(&e))
    };
    let omega0 = grf_init(n, 3.0, 2.5, seed)?;
    verify_bound(&truth, &model, &omega0, &omega0, k_c, m, g, delta)
}

/// Outcome of one numeric invariant.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub criterion: Criterion,
    pub passed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Criterion {
    Below(f64),
    Exactly(f64),
    Within(f64, f64),
}

impl Check {
    pub fn below(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, criterion: Criterion::Below(limit), passed: value < limit }
    }

    pub fn exactly(name: impl Into<String>, value: f64, expected: f64) -> Self {
        Self { name: name.into(), value, criterion: Criterion::Exactly(expected), passed: value == expected }
    }

    pub fn within(name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Self { name: name.into(), value, criterion: Criterion::Within(lo, hi), passed: (lo..=hi).contains(&value) }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        match self.criterion {
            Criterion::Below(l) => write!(f, "{status} {}: {:e} < {l:e}", self.name, self.value),
            Criterion::Exactly(e) => write!(f, "{status} {}: {} == {e}", self.name, self.value),
            Criterion::Within(lo, hi) => write!(f, "{status} {}: {} in [{lo}, {hi}]", self.name, self.value),
        }
    }
}

fn max_abs_diff(a: &VorticityField, b: &VorticityField) -> f64 {
    a.values().iter().zip(b.values()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Max abs error of the Taylor–Green vortex `2 cos x cos y e^{-2νt}` at time `t`.
pub fn taylor_green_error(n: usize, nu: f64, dt: f64, t: f64) -> Result<f64> {
    let solver = Solver::new(n, nu, Forcing::None)?;
    let w0 = VorticityField::from_fn(n, |x, y| 2.0 * x.cos() * y.cos());
    let steps = (t / dt).round() as usize;
    let w1 = solver.advance(&w0, dt, steps)?;
    Ok(max_abs_diff(&w1, &w0.scale((-2.0 * nu * t).exp())))
}

/// Relative energy and enstrophy drift of an inviscid, unforced run.
pub fn inviscid_drift(n: usize, steps: usize) -> Result<(f64, f64)> {
    let mut cfg = SimConfig::decaying(n);
    cfg.nu = 0.0;
    cfg.dt = 2e-3;
    cfg.steps = steps;
    cfg.save_every = steps;
    cfg.init = InitialCondition::McWilliams { k0: 4.0, tau0: 1.0, energy: 0.5 };
    let traj = simulate(&cfg)?;
    let (e0, z0) = (traj.energy[0], traj.enstrophy[0]);
    let (e1, z1) = (*traj.energy.last().expect("frames"), *traj.enstrophy.last().expect("frames"));
    Ok((((e1 - e0) / e0).abs(), ((z1 - z0) / z0).abs()))
}

/// Ratio of errors at `dt` and `dt/2` against a fine reference; ≈16 for RK4.
pub fn rk4_error_ratio(n: usize) -> Result<f64> {
    let solver = Solver::new(n, 1e-3, Forcing::None)?;
    let w0 = grf_init(n, 3.0, 2.5, 11)?;
    let run = |steps: usize| solver.advance(&w0, 1.0 / steps as f64, steps);
    let reference = run(1024)?;
    let e1 = max_abs_diff(&run(32)?, &reference);
    let e2 = max_abs_diff(&run(64)?, &reference);
    Ok(e1 / e2)
}

fn rough_field(n: usize, seed: u64) -> VorticityField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = Tensor::randn(&[n * n], 1.0, &mut rng);
    VorticityField::new(n, t.into_data()).expect("n*n values")
}

/// Relative Parseval mismatch between physical and spectral mean squares.
pub fn parseval_error(n: usize, seed: u64) -> Result<f64> {
    let f = rough_field(n, seed);
    let s = fft2(&f)?;
    let nn = (n * n) as f64;
    let lhs = f.values().iter().map(|v| v * v).sum::<f64>() / nn;
    let rhs = s.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>() / (nn * nn);
    Ok((lhs - rhs).abs() / lhs)
}

/// Relative gap between `Σ E_Z(k)·dk` and the enstrophy.
pub fn spectrum_total_error(n: usize, seed: u64) -> Result<f64> {
    let f = rough_field(n, seed);
    let z = enstrophy(&f);
    Ok((enstrophy_spectrum(&f)?.total() - z).abs() / z)
}

/// `(‖P P x − P x‖_∞, |⟨P x, (I−P) x⟩| / ‖x‖²)` at the default cutoff.
pub fn projection_errors(n: usize, seed: u64) -> Result<(f64, f64)> {
    let x = rough_field(n, seed);
    let kc = default_cutoff(n);
    let px = project_high(&x, kc)?;
    let ppx = project_high(&px, kc)?;
    let idem = max_abs_diff(&px, &ppx);
    let ortho = px.dot(&x.sub(&px)).abs() / x.dot(&x);
    Ok((idem, ortho))
}

/// Randomized monotonicity of the accumulated bound: raising any one of
/// `G > 1`, `δ`, `eps0` or `M` never lowers it. Returns the number of
/// violating comparisons out of `4·trials`.
pub fn bound_monotonicity_violations(trials: usize, seed: u64) -> usize {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    for _ in 0..trials {
        let g = rng.gen_range(1.0..3.0);
        let d = rng.gen_range(0.0..1.0);
        let e = rng.gen_range(0.0..1.0);
        let m = rng.gen_range(0..60usize);
        let b = theorem_bound(g, d, e, m);
        let raised = [
            theorem_bound(g * rng.gen_range(1.0..1.5), d, e, m),
            theorem_bound(g, d + rng.gen_range(0.0..0.5), e, m),
            theorem_bound(g, d, e + rng.gen_range(0.0..0.5), m),
            theorem_bound(g, d, e, m + rng.gen_range(1..5usize)),
        ];
        violations += raised.iter().filter(|&&r| r < b).count();
    }
    violations
}

/// The exact metric identities.
pub fn metric_unit_checks() -> Result<Vec<Check>> {
    let x = grf_init(32, 3.0, 2.5, 5)?;
    let ones = VorticityField::new(2, vec![1.0; 4])?;
    let spec = enstrophy_spectrum(&x)?;
    let spec_err = normalized_spectral_error(&spec, &spec)?.into_iter().flatten().fold(0.0, |m: f64, e| m.max(e.abs()));
    Ok(vec![
        Check::exactly("ssim(x, x)", ssim(&x, &x)?, 1.0),
        Check::exactly("relative_l2(x, x)", relative_l2(&x, &x)?, 0.0),
        Check::exactly("l2(ones 2x2, zeros)", l2_error(&ones, &VorticityField::zeros(2))?, 2.0),
        Check::exactly("spectral error of identical spectra", spec_err, 0.0),
    ])
}

/// The quick invariant suite run by `selftest`.
pub fn run_invariants() -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    checks.push(Check::below("taylor-green max error (n 32, 200 steps)", taylor_green_error(32, 1e-2, 1e-3, 0.2)?, 1e-6));
    let (de, dz) = inviscid_drift(32, 200)?;
    checks.push(Check::below("inviscid energy drift", de, 1e-5));
    checks.push(Check::below("inviscid enstrophy drift", dz, 1e-5));
    checks.push(Check::within("rk4 error ratio", rk4_error_ratio(16)?, 13.0, 18.0));
    checks.push(Check::below("parseval", parseval_error(32, 1)?, 1e-12));
    checks.push(Check::below("spectrum totalization", spectrum_total_error(32, 2)?, 1e-6));
    let (idem, ortho) = projection_errors(32, 3)?;
    checks.push(Check::below("project_high idempotence", idem, 1e-10));
    checks.push(Check::below("project_high orthogonality", ortho, 1e-10));
    checks.push(Check::exactly("theorem_bound(2, 1, 0, 3)", theorem_bound(2.0, 1.0, 0.0, 3), 7.0));
    let violations = constructed_bound_check(16, 1.2, 0.01, 50, 4.0, 0)?.satisfied.iter().filter(|s| !**s).count();
    checks.push(Check::exactly("constructed system bound violations", violations as f64, 0.0));
    checks.push(Check::exactly("bound monotonicity violations", bound_monotonicity_violations(1000, 0) as f64, 0.0));
    checks.extend(metric_unit_checks()?);
    for c in run_op_checks(&[0])? {
        checks.push(Check::below(format!("grad {} (seed {})", c.op, c.seed), c.report.max_rel_error, OP_TOLERANCE));
    }
    checks.push(Check::below("grad composed model (seed 0)", composed_model_check(0)?.max_rel_error, MODEL_TOLERANCE));
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_is_monotone() {
        assert_eq!(bound_monotonicity_violations(20_000, 9), 0);
    }

    #[test]
    fn check_constructors() {
        assert!(Check::below("a", 0.5, 1.0).passed);
        assert!(!Check::below("a", 1.0, 1.0).passed);
        assert!(Check::exactly("b", 7.0, 7.0).passed);
        assert!(!Check::within("c", 12.9, 13.0, 18.0).passed);
        assert!(Check::below("a", 0.5, 1.0).to_string().starts_with("PASS"));
    }

    #[test]
    fn op_cases_are_deterministic_and_distinct() {
        let a = op_cases(3);
        let b = op_cases(3);
        let c = op_cases(4);
        let names: std::collections::BTreeSet<_> = a.iter().map(|c| c.name).collect();
        assert_eq!(names.len(), a.len());
        for ((x, y), z) in a.iter().zip(&b).zip(&c) {
            assert_eq!(x.inputs, y.inputs);
            assert_ne!(x.inputs, z.inputs);
        }
    }
}
