//! The ablation study: one dataset, every variant trained on several seeds,
//! each scored by validation loss, rollout error and high-band spectral error.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::datasets::{generate_dataset, Dataset, Regime};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate_trajectory, Surrogate};
use crate::io::fmt_sig;
use crate::model::{ModelConfig, Variant};
use crate::training::{train, worker_threads, TrainConfig};

#[derive(Clone, Debug)]
pub struct StudyConfig {
    pub regime: Regime,
    pub n: usize,
    pub trajectories: usize,
    pub frames: usize,
    pub data_seed: u64,
    /// Each seed fixes both the model initialization and the batch order.
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    /// Architecture shared by all variants; `variant`, `n` and `seed` are overridden.
    pub model: ModelConfig,
    /// `seed` is overridden per run.
    pub train: TrainConfig,
    /// First ground-truth frame of every test rollout.
    pub start: usize,
    pub rollout_steps: usize,
    pub spectrum_step: usize,
    /// Spectral error is averaged over shells `k > k_c`.
    pub k_c: f64,
}

impl Default for StudyConfig {
    /// Desk scale: 24 decaying trajectories of 60 frames at n = 64, 30 epochs,
    /// seeds 42, 43 and 44.
    fn default() -> Self {
        let n = 64;
        Self {
            regime: Regime::Decaying,
            n,
            trajectories: 24,
            frames: 60,
            data_seed: 42,
            seeds: vec![42, 43, 44],
            variants: Variant::ALL.to_vec(),
            model: ModelConfig { widths: vec![4, 8, 16], ..ModelConfig::default() },
            train: TrainConfig { epochs: 30, ..TrainConfig::default() },
            start: 0,
            rollout_steps: 50,
            spectrum_step: 10,
            k_c: n as f64 / 4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub variant: Variant,
    pub seed: u64,
    pub params: usize,
    /// Lowest validation MSE over the epochs; the matching checkpoint is scored.
    pub best_val_loss: f64,
    /// Mean relative L2 over all rollout steps, averaged over test trajectories.
    pub rollout_mean_rel_l2: f64,
    /// Mean absolute normalized spectral error over shells above `k_c` at
    /// `spectrum_step`, averaged over test trajectories.
    pub spectral_error_high: f64,
    pub train_secs: f64,
}

#[derive(Clone, Debug)]
pub struct StudyReport {
    pub runs: Vec<RunResult>,
    pub data_secs: f64,
    pub total_secs: f64,
    pub threads: usize,
}

impl StudyReport {
    pub fn get(&self, variant: Variant, seed: u64) -> Option<&RunResult> {
        self.runs.iter().find(|r| r.variant == variant && r.seed == seed)
    }

    pub fn seeds(&self) -> Vec<u64> {
        let mut s: Vec<u64> = self.runs.iter().map(|r| r.seed).collect();
        s.dedup();
        s
    }

    fn pair(&self, seed: u64, a: Variant, b: Variant, key: fn(&RunResult) -> f64) -> Option<bool> {
        Some(key(self.get(a, seed)?) < key(self.get(b, seed)?))
    }

    /// Full validation MSE below that of no_hds.
    pub fn val_full_beats_no_hds(&self, seed: u64) -> Option<bool> {
        self.pair(seed, Variant::Full, Variant::NoHds, |r| r.best_val_loss)
    }

    /// Rollout error ordering full < no_mg < each of high_only, low_only, no_hds.
    pub fn rollout_ordering_holds(&self, seed: u64) -> Option<bool> {
        let key = |r: &RunResult| r.rollout_mean_rel_l2;
        let mut ok = self.pair(seed, Variant::Full, Variant::NoMg, key)?;
        for v in [Variant::HighOnly, Variant::LowOnly, Variant::NoHds] {
            ok &= self.pair(seed, Variant::NoMg, v, key)?;
        }
        Some(ok)
    }

    /// High-band spectral error of full below that of no_hds.
    pub fn spectral_full_beats_no_hds(&self, seed: u64) -> Option<bool> {
        self.pair(seed, Variant::Full, Variant::NoHds, |r| r.spectral_error_high)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,seed,params,best_val_loss,rollout_mean_rel_l2,spectral_error_high\n");
        for r in &self.runs {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.variant,
                r.seed,
                r.params,
                fmt_sig(r.best_val_loss),
                fmt_sig(r.rollout_mean_rel_l2),
                fmt_sig(r.spectral_error_high)
            );
        }
        s
    }
}

/// Generate the dataset under `data_dir`, then train and score every
/// (variant, seed) pair. `log` receives one line per finished run.
pub fn run_study(config: &StudyConfig, data_dir: &Path, log: &mut dyn FnMut(&str)) -> Result<StudyReport> {
    if config.seeds.is_empty() || config.variants.is_empty() {
        return Err(Error::InvalidArgument("ablation study needs at least one seed and one variant".into()));
    }
    let t0 = Instant::now();
    let sim = config.regime.sim_config(config.n);
    generate_dataset(config.regime, config.trajectories, config.frames, &sim, config.data_seed, data_dir)?;
    let data = Dataset::open(data_dir)?;
    let data_secs = t0.elapsed().as_secs_f64();
    log(&format!("dataset: {} trajectories x {} frames at n = {} in {data_secs:.1}s", config.trajectories, config.frames, config.n));
    let test: Vec<_> = data.manifest.test.iter().map(|&t| data.frames(t)).collect();

    let mut runs = Vec::new();
    for &seed in &config.seeds {
        for &variant in &config.variants {
            let t = Instant::now();
            let mc = ModelConfig { n: config.n, variant, seed, ..config.model.clone() };
            let tc = TrainConfig { seed, ..config.train.clone() };
            let outcome = train(&mc, &tc, &data, None)?;
            let params = outcome.best.model.param_count();
            let surrogate = Surrogate::from(outcome.best);
            let (mut rel, mut spec) = (0.0, 0.0);
            for frames in &test {
                let gt = frames.get(config.start..).unwrap_or(&[]);
                let report = evaluate_trajectory(&surrogate, gt, config.rollout_steps, config.k_c, "ablation")?;
                rel += report.mean_rel_l2();
                spec += report.step(config.spectrum_step).and_then(|s| s.mean_abs_spectral_error_above(config.k_c)).unwrap_or(f64::NAN);
            }
            let count = test.len() as f64;
            let run = RunResult {
                variant,
                seed,
                params,
                best_val_loss: outcome.best_val_loss,
                rollout_mean_rel_l2: rel / count,
                spectral_error_high: spec / count,
                train_secs: t.elapsed().as_secs_f64(),
            };
            log(&format!(
                "{variant:<9} seed {seed}: val {} rollout rel L2 {} high-band spectral error {} ({:.0}s)",
                fmt_sig(run.best_val_loss),
                fmt_sig(run.rollout_mean_rel_l2),
                fmt_sig(run.spectral_error_high),
                run.train_secs
            ));
            runs.push(run);
        }
    }
    Ok(StudyReport { runs, data_secs, total_secs: t0.elapsed().as_secs_f64(), threads: worker_threads() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(variant: Variant, seed: u64, val: f64, rel: f64, spec: f64) -> RunResult {
        RunResult { variant, seed, params: 1, best_val_loss: val, rollout_mean_rel_l2: rel, spectral_error_high: spec, train_secs: 0.0 }
    }

    #[test]
    fn orderings() {
        let runs = vec![
            run(Variant::Full, 1, 0.1, 0.2, 0.3),
            run(Variant::NoHds, 1, 0.2, 0.5, 0.4),
            run(Variant::NoMg, 1, 0.3, 0.3, 0.1),
            run(Variant::HighOnly, 1, 0.3, 0.4, 0.1),
            run(Variant::LowOnly, 1, 0.3, 0.35, 0.1),
        ];
        let mut report = StudyReport { runs, data_secs: 0.0, total_secs: 0.0, threads: 1 };
        assert_eq!(report.val_full_beats_no_hds(1), Some(true));
        assert_eq!(report.rollout_ordering_holds(1), Some(true));
        assert_eq!(report.spectral_full_beats_no_hds(1), Some(true));
        assert_eq!(report.val_full_beats_no_hds(2), None);
        // no_mg must beat every single-path variant, not just one
        report.runs[4].rollout_mean_rel_l2 = 0.25;
        assert_eq!(report.rollout_ordering_holds(1), Some(false));
        assert_eq!(report.seeds(), vec![1]);
    }
}
