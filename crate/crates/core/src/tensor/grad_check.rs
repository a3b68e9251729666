//! Central finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Worst coordinate found by a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat coordinate, analytic, numeric)` at the worst point.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub coords_checked: usize,
    /// Coordinates whose perturbation crossed an activation kink.
    pub coords_skipped: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Relative error with a `1e-8` floor on the denominator.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compare `analytic` gradients against central differences. `per_input`
/// limits the number of randomly sampled coordinates per input tensor; `None`
/// checks every coordinate.
pub fn grad_check_fn(
    value: impl Fn(&[Tensor]) -> Result<f64>,
    analytic: &[Tensor],
    inputs: &[Tensor],
    eps: f64,
    per_input: Option<(usize, u64)>,
) -> Result<GradCheckReport> {
    check(|xs| Ok((value(xs)?, Vec::new())), analytic, inputs, eps, per_input)
}

/// Like [`grad_check_fn`] for piecewise-smooth functions. `value` also
/// returns the kink pattern of its evaluation (see [`Graph::kink_pattern`]);
/// a coordinate whose `±eps` evaluations change the pattern straddles a kink,
/// where central differences are meaningless, and is replaced by another
/// sampled coordinate of the same tensor.
pub fn grad_check_piecewise(
    value: impl Fn(&[Tensor]) -> Result<(f64, Vec<bool>)>,
    analytic: &[Tensor],
    inputs: &[Tensor],
    eps: f64,
    per_input: Option<(usize, u64)>,
) -> Result<GradCheckReport> {
    check(value, analytic, inputs, eps, per_input)
}

fn check(
    value: impl Fn(&[Tensor]) -> Result<(f64, Vec<bool>)>,
    analytic: &[Tensor],
    inputs: &[Tensor],
    eps: f64,
    per_input: Option<(usize, u64)>,
) -> Result<GradCheckReport> {
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::InvalidArgument(format!("grad_check: eps {eps} outside (0, 1e-2]")));
    }
    if analytic.len() != inputs.len() {
        return Err(Error::InvalidArgument("grad_check: one analytic gradient per input required".into()));
    }
    let base_pattern = value(inputs)?.1;
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, coords_checked: 0, coords_skipped: 0 };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ii, (input, grad)) in inputs.iter().zip(analytic).enumerate() {
        input.expect_same_shape(grad)?;
        // a random order, visited until `k` kink-free coordinates are found
        let (order, want): (Vec<usize>, usize) = match per_input {
            Some((k, seed)) if k < input.numel() => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(ii as u64));
                (sample(&mut rng, input.numel(), input.numel()).into_vec(), k)
            }
            _ => ((0..input.numel()).collect(), input.numel()),
        };
        let mut done = 0;
        for j in order {
            if done == want {
                break;
            }
            let orig = input.data()[j];
            work[ii].data_mut()[j] = orig + eps;
            let (fp, pp) = value(&work)?;
            work[ii].data_mut()[j] = orig - eps;
            let (fm, pm) = value(&work)?;
            work[ii].data_mut()[j] = orig;
            if pp != base_pattern || pm != base_pattern {
                report.coords_skipped += 1;
                continue;
            }
            done += 1;
            let numeric = (fp - fm) / (2.0 * eps);
            let a = grad.data()[j];
            let err = relative_error(a, numeric);
            report.coords_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((ii, j, a, numeric));
            }
        }
    }
    Ok(report)
}

/// Gradient check for a closure that builds a scalar on a fresh [`Graph`]
/// from leaves holding `inputs`.
pub fn grad_check<F>(op: F, inputs: &[Tensor], eps: f64, per_input: Option<(usize, u64)>) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let evaluate = |xs: &[Tensor], requires_grad: bool| -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.leaf(t.clone(), requires_grad)).collect();
        let out = op(&mut g, &vars)?;
        if !g.value(out).is_scalar() {
            return Err(Error::Graph("grad_check: closure must return a scalar".into()));
        }
        Ok((g, vars, out))
    };
    let (mut g, vars, out) = evaluate(inputs, true)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get(v).cloned().expect("leaves requiring grad always get one")).collect();
    let value = |xs: &[Tensor]| -> Result<f64> {
        let (g, _, out) = evaluate(xs, false)?;
        Ok(g.value(out).data()[0])
    };
    grad_check_fn(value, &analytic, inputs, eps, per_input)
}
