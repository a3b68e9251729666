//! The `vortcast` command line: data generation, training, evaluation,
//! spectra, gradient checks and the error-accumulation probe.
//!
//! Every subcommand resolves its settings from built-in defaults, then an
//! optional `--config` file, then flag shortcuts, then `--set key=value`
//! overrides (later wins). Unknown keys are rejected. The resolved settings
//! are echoed to `resolved_config.txt` in the output directory, and that file
//! alone reproduces the run via `--config`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::datasets::{generate_dataset, Dataset, Regime, Split};
use crate::dns::{SimConfig, Solver};
use crate::error::Error;
use crate::evaluate::{
    estimate_growth_factor, evaluate_trajectory, measure_delta_hf, random_direction, verify_bound, GrowthEstimate, Persistence, StepModel,
    Surrogate, TheoremProbe,
};
use crate::field::VorticityField;
use crate::io::{fmt_sig, join_list, save_tensor, write_text, KvMap};
use crate::model::ModelConfig;
use crate::report::{emit_rollout, emit_table, parse_formats, Cell, Format, Table};
use crate::selftest::{composed_model_check, constructed_bound_check, run_invariants, run_op_checks, MODEL_TOLERANCE, OP_TOLERANCE};
use crate::spectral::{default_cutoff, enstrophy_spectrum};
use crate::tensor::{GradCheckReport, Tensor};
use crate::training::{train_with_progress, Checkpoint, TrainConfig, CONFIG_ECHO};

pub const OUT_ENV: &str = "TL1_OUT";
const DEFAULT_OUT_ROOT: &str = "tl1_out";

#[derive(Parser, Debug)]
#[command(name = "vortcast", version, about = "2D turbulence lab: DNS data, surrogate training, rollout diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Plain-text `key = value` settings file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory [default: $TL1_OUT/<command>, else ./tl1_out/<command>].
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed override for the command's random choices.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a trajectory dataset (keys: regime, trajectories, frames, seed, sim.*).
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        regime: Option<String>,
        /// Grid size (sets sim.n).
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        trajectories: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Train a surrogate (keys: data, model.*, train.*).
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// full, no_hds, no_mg, high_only or low_only (sets model.variant).
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Roll a checkpoint out on every trajectory of a split and score it
    /// (keys: checkpoint, data, split, start, steps, k_c, spectrum_steps, format, baseline).
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        /// csv, json or csv,json.
        #[arg(long)]
        format: Option<String>,
    },
    /// Roll a checkpoint out on one trajectory and save the predicted frames
    /// (keys: checkpoint, data, trajectory, start, steps, k_c, format).
    Rollout {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        trajectory: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Enstrophy spectra of dataset frames (keys: data, trajectory, frames, format).
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        trajectory: Option<usize>,
        /// Comma-separated frame indices.
        #[arg(long)]
        frames: Option<String>,
    },
    /// Error-accumulation probe: growth factor, single-step high-band error
    /// and the accumulated bound, on a checkpoint or on a constructed linear
    /// system (keys: mode, checkpoint, data, trajectory, k_c, steps, g, delta, n, ...).
    BoundCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Finite-difference check of every tensor op and of a small composed model (keys: seeds).
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Comma-separated seeds.
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Quick invariant suite: solver, spectra, metrics, bound, gradients.
    Selftest {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate { .. } => "generate",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Rollout { .. } => "rollout",
            Command::Spectrum { .. } => "spectrum",
            Command::BoundCheck { .. } => "bound-check",
            Command::Gradcheck { .. } => "gradcheck",
            Command::Selftest { .. } => "selftest",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Generate { common, .. }
            | Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::Rollout { common, .. }
            | Command::Spectrum { common, .. }
            | Command::BoundCheck { common, .. }
            | Command::Gradcheck { common, .. }
            | Command::Selftest { common } => common,
        }
    }

    /// Flag shortcuts as `(key, value)` pairs.
    fn shortcuts(&self) -> Vec<(String, String)> {
        fn put<T: ToString>(out: &mut Vec<(String, String)>, key: &str, v: &Option<T>) {
            if let Some(v) = v {
                out.push((key.to_string(), v.to_string()));
            }
        }
        let mut out = Vec::new();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        match self {
            Command::Generate { common, regime, n, trajectories, frames } => {
                put(&mut out, "regime", regime);
                put(&mut out, "sim.n", n);
                put(&mut out, "trajectories", trajectories);
                put(&mut out, "frames", frames);
                put(&mut out, "seed", &common.seed);
            }
            Command::Train { common, data, variant, epochs } => {
                put(&mut out, "data", &path(data));
                put(&mut out, "model.variant", variant);
                put(&mut out, "train.epochs", epochs);
                put(&mut out, "model.seed", &common.seed);
                put(&mut out, "train.seed", &common.seed);
            }
            Command::Eval { checkpoint, data, steps, format, .. } => {
                put(&mut out, "checkpoint", &path(checkpoint));
                put(&mut out, "data", &path(data));
                put(&mut out, "steps", steps);
                put(&mut out, "format", format);
            }
            Command::Rollout { checkpoint, data, trajectory, steps, .. } => {
                put(&mut out, "checkpoint", &path(checkpoint));
                put(&mut out, "data", &path(data));
                put(&mut out, "trajectory", trajectory);
                put(&mut out, "steps", steps);
            }
            Command::Spectrum { data, trajectory, frames, .. } => {
                put(&mut out, "data", &path(data));
                put(&mut out, "trajectory", trajectory);
                put(&mut out, "frames", frames);
            }
            Command::BoundCheck { common, checkpoint, data, steps } => {
                put(&mut out, "checkpoint", &path(checkpoint));
                put(&mut out, "data", &path(data));
                put(&mut out, "steps", steps);
                put(&mut out, "seed", &common.seed);
            }
            Command::Gradcheck { seeds, .. } => put(&mut out, "seeds", seeds),
            Command::Selftest { .. } => {}
        }
        out
    }
}

/// Failure classes mapped to exit codes 2 and 1.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Domain(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Usage(m),
            other => Failure::Domain(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Parse `argv` (program name first), run the subcommand and return the
/// process exit code: 0 success, 1 domain error, 2 usage error.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let name = cli.command.name();
    match run(&cli.command) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n");
            let mut cmd = Cli::command();
            cmd.build();
            if let Some(sub) = cmd.find_subcommand_mut(name) {
                eprintln!("{}", sub.render_usage());
            }
            eprintln!("Run `vortcast {name} --help` for the accepted flags and keys.");
            2
        }
        Err(Failure::Domain(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn gather(cmd: &Command) -> CliResult<KvMap> {
    let common = cmd.common();
    let mut kv = KvMap::from_pairs([], "settings")?;
    if let Some(p) = &common.config {
        kv.overlay(KvMap::parse(&crate::io::read_text(p)?, &p.display().to_string())?);
    }
    let shortcuts = cmd.shortcuts();
    kv.overlay(KvMap::from_pairs(shortcuts.iter().map(|(k, v)| (k.as_str(), v.as_str())), "flags")?);
    let mut sets = Vec::with_capacity(common.set.len());
    for s in &common.set {
        let (k, v) = s.split_once('=').ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got `{s}`")))?;
        sets.push((k.trim(), v.trim()));
    }
    kv.overlay(KvMap::from_pairs(sets, "--set")?);
    Ok(kv)
}

fn out_dir(cmd: &Command) -> CliResult<PathBuf> {
    let dir = match &cmd.common().out {
        Some(p) => p.clone(),
        None => {
            let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT));
            root.join(cmd.name())
        }
    };
    std::fs::create_dir_all(&dir).map_err(|e| Failure::Domain(Error::Io { path: dir.clone(), source: e }))?;
    Ok(dir)
}

fn require_path(kv: &mut KvMap, key: &str) -> CliResult<PathBuf> {
    kv.take_str(key).map(PathBuf::from).ok_or_else(|| Failure::Usage(format!("missing required setting `{key}` (flag --{key})")))
}

fn echo(dir: &Path, command: &str, body: &str) -> CliResult<()> {
    write_text(&dir.join(CONFIG_ECHO), &format!("# vortcast {command}\n{body}"))?;
    Ok(())
}

fn run(cmd: &Command) -> CliResult<i32> {
    let mut kv = gather(cmd)?;
    match cmd {
        Command::Generate { .. } => generate(kv, cmd),
        Command::Train { .. } => train(kv, cmd),
        Command::Eval { .. } => eval(kv, cmd),
        Command::Rollout { .. } => rollout(kv, cmd),
        Command::Spectrum { .. } => spectrum(kv, cmd),
        Command::BoundCheck { .. } => bound_check(kv, cmd),
        Command::Gradcheck { .. } => {
            let seeds: Vec<u64> = kv.take_list("seeds")?.unwrap_or_else(|| (0..5).collect());
            kv.finish()?;
            gradcheck(&seeds, cmd)
        }
        Command::Selftest { .. } => {
            kv.finish()?;
            selftest(cmd)
        }
    }
}

fn generate(mut kv: KvMap, cmd: &Command) -> CliResult<i32> {
    let regime: Regime = kv.take_str("regime").as_deref().unwrap_or("decaying").parse()?;
    let trajectories: usize = kv.take_or("trajectories", 24)?;
    let frames: usize = kv.take_or("frames", 60)?;
    let seed: u64 = kv.take_or("seed", 42)?;
    for fixed in ["sim.steps", "sim.seed"] {
        if kv.contains(fixed) {
            return Err(Failure::Usage(format!("`{fixed}` is derived from frames and seed; set those instead")));
        }
    }
    let n: usize = kv.take_or("sim.n", 64)?;
    let mut sim = regime.sim_config(n);
    let mut sim_kv = KvMap::default();
    for key in [
        "nu",
        "dt",
        "forcing",
        "forcing_amplitude",
        "forcing_wavenumber",
        "save_every",
        "spinup_steps",
        "init",
        "k0",
        "tau0",
        "target_energy",
        "tau",
        "alpha",
    ] {
        if let Some(v) = kv.take_str(&format!("sim.{key}")) {
            sim_kv.overlay(KvMap::from_pairs([(key, v.as_str())], "settings")?);
        }
    }
    sim.apply_kv(&mut sim_kv)?;
    sim_kv.finish()?;
    kv.finish()?;
    sim.validate()?;
    let dir = out_dir(cmd)?;
    let mut body = format!("regime = {regime}\ntrajectories = {trajectories}\nframes = {frames}\nseed = {seed}\n");
    for line in sim.to_kv().lines().filter(|l| !l.starts_with("steps ") && !l.starts_with("seed ")) {
        let _ = writeln!(body, "sim.{line}");
    }
    echo(&dir, "generate", &body)?;
    let manifest = generate_dataset(regime, trajectories, frames, &sim, seed, &dir)?;
    println!(
        "generated {} {regime} trajectories x {frames} frames at n={} in {} (train {}, val {}, test {})",
        manifest.trajectory_files.len(),
        manifest.n,
        dir.display(),
        manifest.train.len(),
        manifest.val.len(),
        manifest.test.len()
    );
    Ok(0)
}

fn train(mut kv: KvMap, cmd: &Command) -> CliResult<i32> {
    let data_dir = require_path(&mut kv, "data")?;
    let mut tc = TrainConfig::default();
    tc.apply_kv(&mut kv, "train.")?;
    let data = Dataset::open(&data_dir)?;
    let mut mc = ModelConfig { n: data.n(), ..ModelConfig::default() };
    mc.apply_kv(&mut kv, "model.")?;
    kv.finish()?;
    mc.validate()?;
    tc.validate()?;
    let dir = out_dir(cmd)?;
    let body = format!("data = {}\n{}{}", data_dir.display(), mc.to_kv("model."), tc.to_kv("train."));
    let outcome = train_with_progress(&mc, &tc, &data, Some(&dir), &mut |epoch, tr, va| {
        eprintln!("epoch {epoch:>4}  train {}  val {}", fmt_sig(tr), fmt_sig(va));
    })?;
    echo(&dir, "train", &body)?;
    println!(
        "trained {} ({} parameters) for {} epochs: best val {} at epoch {}; wall clock {:.1}s; artifacts in {}",
        mc.variant,
        outcome.last.model.param_count(),
        tc.epochs,
        fmt_sig(outcome.best_val_loss),
        outcome.best.epoch,
        outcome.log.wall_clock_secs,
        dir.display()
    );
    Ok(0)
}

fn load_checkpoint(kv: &mut KvMap) -> CliResult<(PathBuf, Checkpoint)> {
    let path = require_path(kv, "checkpoint")?;
    let ckpt = Checkpoint::load(&path)?;
    Ok((path, ckpt))
}

fn formats(kv: &mut KvMap) -> CliResult<(String, Vec<Format>)> {
    let text = kv.take_str("format").unwrap_or_else(|| "csv".into());
    let f = parse_formats(&text)?;
    Ok((text, f))
}

fn cutoff(kv: &mut KvMap, n: usize) -> CliResult<f64> {
    Ok(kv.take_or("k_c", default_cutoff(n))?)
}

fn check_horizon(frames: usize, start: usize, steps: usize) -> CliResult<()> {
    if start + steps >= frames {
        return Err(Failure::Domain(Error::InvalidArgument(format!(
            "{steps} steps from frame {start} need {} frames, trajectories hold {frames}",
            start + steps + 1
        ))));
    }
    Ok(())
}

fn eval(mut kv: KvMap, cmd: &Command) -> CliResult<i32> {
    let (ckpt_path, ckpt) = load_checkpoint(&mut kv)?;
    let data_dir = require_path(&mut kv, "data")?;
    let data = Dataset::open(&data_dir)?;
    let split_name = kv.take_str("split").unwrap_or_else(|| "test".into());
    let split: Split = split_name.parse()?;
    let start: usize = kv.take_or("start", 0)?;
    let steps: usize = kv.take_or("steps", 50)?;
    let k_c = cutoff(&mut kv, data.n())?;
    let spectrum_steps: Vec<usize> = kv.take_list("spectrum_steps")?.unwrap_or_else(|| vec![1, 10, 50]);
    let baseline: bool = kv.take_or("baseline", false)?;
    let (format_text, formats) = formats(&mut kv)?;
    kv.finish()?;
    check_horizon(data.manifest.frames_per_trajectory, start, steps)?;
    let dir = out_dir(cmd)?;
    let body = format!(
        "checkpoint = {}\ndata = {}\nsplit = {split_name}\nstart = {start}\nsteps = {steps}\nk_c = {k_c}\nspectrum_steps = {}\nbaseline = {baseline}\nformat = {format_text}\n",
        ckpt_path.display(),
        data_dir.display(),
        join_list(&spectrum_steps)
    );
    echo(&dir, "eval", &body)?;
    let surrogate = Surrogate::from(ckpt);
    let mut models: Vec<(&str, &dyn StepModel)> = vec![("model", &surrogate)];
    if baseline {
        models.push(("persistence", &Persistence));
    }
    let mut summary = Table::new(&[
        "model_index",
        "trajectory",
        "steps_scored",
        "diverged_at",
        "mean_rel_l2",
        "final_l2",
        "final_rel_l2",
        "final_ssim",
        "spec_err_high_step10",
    ]);
    for (mi, (label, model)) in models.iter().enumerate() {
        for &t in data.manifest.split(split) {
            let frames = data.frames(t);
            let report = evaluate_trajectory(*model, &frames[start..], steps, k_c, label)?;
            emit_rollout(&report, &dir, &format!("{label}_traj{t:04}"), &spectrum_steps, &formats)?;
            let last = report.steps.last();
            summary.push(vec![
                mi.into(),
                t.into(),
                report.steps.len().into(),
                report.diverged_at.map_or(Cell::Missing, Cell::from),
                report.mean_rel_l2().into(),
                last.map(|s| s.l2).into(),
                last.map(|s| s.rel_l2).into(),
                last.map(|s| s.ssim).into(),
                report.step(10).and_then(|s| s.mean_abs_spectral_error_above(default_cutoff(data.n()))).into(),
            ])?;
            println!(
                "{label} trajectory {t}: mean rel L2 {} over {} steps{}",
                fmt_sig(report.mean_rel_l2()),
                report.steps.len(),
                report.diverged_at.map(|k| format!(", diverged at step {k}")).unwrap_or_default()
            );
        }
    }
    emit_table(&summary, &dir, "summary", &formats)?;
    let legend: String = models.iter().enumerate().map(|(i, (l, _))| format!("{i} = {l}\n")).collect();
    write_text(&dir.join("summary_models.txt"), &legend)?;
    println!("reports in {}", dir.display());
    Ok(0)
}

fn rollout(mut kv: KvMap, cmd: &Command) -> CliResult<i32> {
    let (ckpt_path, ckpt) = load_checkpoint(&mut kv)?;
    let data_dir = require_path(&mut kv, "data")?;
    let data = Dataset::open(&data_dir)?;
    let default_traj = *data.manifest.test.first().ok_or_else(|| Failure::Usage("dataset has no test trajectories".into()))?;
    let traj: usize = kv.take_or("trajectory", default_traj)?;
    let start: usize = kv.take_or("start", 0)?;
    let steps: usize = kv.take_or("steps", 50)?;
    let k_c = cutoff(&mut kv, data.n())?;
    let (format_text, formats) = formats(&mut kv)?;
    kv.finish()?;
    if traj >= data.manifest.trajectory_files.len() {
        return Err(Failure::Usage(format!("trajectory {traj} out of range")));
    }
    check_horizon(data.manifest.frames_per_trajectory, start, steps)?;
    let dir = out_dir(cmd)?;
    let body = format!(
        "checkpoint = {}\ndata = {}\ntrajectory = {traj}\nstart = {start}\nsteps = {steps}\nk_c = {k_c}\nformat = {format_text}\n",
        ckpt_path.display(),
        data_dir.display()
    );
    echo(&dir, "rollout", &body)?;
    let surrogate = Surrogate::from(ckpt);
    let frames = data.frames(traj);
    let run = crate::evaluate::rollout(&surrogate, &frames[start..start + surrogate.history()], steps)?;
    let n = data.n();
    let mut values = Vec::with_capacity(run.frames.len() * n * n);
    for f in &run.frames {
        values.extend_from_slice(f.values());
    }
    if !run.frames.is_empty() {
        save_tensor(&dir.join("rollout.tl1t"), &Tensor::new(vec![run.frames.len(), n, n], values)?)?;
    }
    let report = evaluate_trajectory(&surrogate, &frames[start..], steps, k_c, "model")?;
    emit_rollout(&report, &dir, "rollout_metrics", &[1, 10, steps], &formats)?;
    println!(
        "rolled out {} frames of trajectory {traj}{}; mean rel L2 {}",
        run.frames.len(),
        run.diverged_at.map(|k| format!(" (diverged at step {k})")).unwrap_or_default(),
        fmt_sig(report.mean_rel_l2())
    );
    Ok(0)
}

fn spectrum(mut kv: KvMap, cmd: &Command) -> CliResult<i32> {
    let data_dir = require_path(&mut kv, "data")?;
    let data = Dataset::open(&data_dir)?;
    let traj: usize = kv.take_or("trajectory", 0)?;
    let frames: Vec<usize> = kv.take_list("frames")?.unwrap_or_else(|| vec![0]);
    let (format_text, formats) = formats(&mut kv)?;
    kv.finish()?;
    if traj >= data.manifest.trajectory_files.len() {
        return Err(Failure::Usage(format!("trajectory {traj} out of range")));
    }
    if let Some(&f) = frames.iter().find(|&&f| f >= data.manifest.frames_per_trajectory) {
        return Err(Failure::Usage(format!("frame {f} out of range")));
    }
    let dir = out_dir(cmd)?;
    let body = format!("data = {}\ntrajectory = {traj}\nframes = {}\nformat = {format_text}\n", data_dir.display(), join_list(&frames));
    echo(&dir, "spectrum", &body)?;
    let curves = frames.iter().map(|&f| enstrophy_spectrum(&data.frame(traj, f))).collect::<Result<Vec<_>, _>>()?;
    let mut cols = vec!["k".to_string()];
    cols.extend(frames.iter().map(|f| format!("E_Z_frame{f}")));
    let mut table = Table::new(&cols);
    if let Some(first) = curves.first() {
        for (i, &k) in first.k_bins.iter().enumerate() {
            let mut row = vec![Cell::from(k)];
            row.extend(curves.iter().map(|c| Cell::Real(c.density[i])));
            table.push(row)?;
        }
    }
    emit_table(&table, &dir, &format!("spectrum_traj{traj:04}"), &formats)?;
    println!("{} spectra of trajectory {traj} written to {}", frames.len(), dir.display());
    Ok(0)
}

fn bound_check(mut kv: KvMap, cmd: &Command) -> CliResult<i32> {
    let has_ckpt = kv.contains("checkpoint");
    let mode = kv.take_str("mode").unwrap_or_else(|| if has_ckpt { "model".into() } else { "synthetic".into() });
    let steps: usize = kv.take_or("steps", 50)?;
    let seed: u64 = kv.take_or("seed", 42)?;
    match mode.as_str() {
        "synthetic" => {
            let n: usize = kv.take_or("n", 16)?;
            let g: f64 = kv.take_or("g", 1.2)?;
            let delta: f64 = kv.take_or("delta", 0.01)?;
            let k_c = cutoff(&mut kv, n)?;
            kv.finish()?;
            let dir = out_dir(cmd)?;
            let body = format!("mode = synthetic\nsteps = {steps}\nseed = {seed}\nn = {n}\ng = {g}\ndelta = {delta}\nk_c = {k_c}\n");
            echo(&dir, "bound-check", &body)?;
            let check = constructed_bound_check(n, g, delta, steps, k_c, seed)?;
            write_text(&dir.join("bound_check.txt"), &check.to_text())?;
            let violations = check.satisfied.iter().filter(|s| !**s).count();
            println!("constructed linear system: bound holds at {}/{} steps", steps - violations, steps);
            Ok(if violations == 0 { 0 } else { 1 })
        }
        "model" => {
            let (ckpt_path, ckpt) = load_checkpoint(&mut kv)?;
            let data_dir = require_path(&mut kv, "data")?;
            let data = Dataset::open(&data_dir)?;
            let default_traj = *data.manifest.test.first().ok_or_else(|| Failure::Usage("dataset has no test trajectories".into()))?;
            let traj: usize = kv.take_or("trajectory", default_traj)?;
            let k_c = cutoff(&mut kv, data.n())?;
            let iters: usize = kv.take_or("power_iters", 30)?;
            let tol: f64 = kv.take_or("power_tol", 1e-4)?;
            let probe_every: usize = kv.take_or("probe_every", 10)?;
            kv.finish()?;
            if probe_every == 0 {
                return Err(Failure::Usage("probe_every must be at least 1".into()));
            }
            check_horizon(data.manifest.frames_per_trajectory, 0, steps)?;
            let dir = out_dir(cmd)?;
            let body = format!(
                "mode = model\ncheckpoint = {}\ndata = {}\ntrajectory = {traj}\nsteps = {steps}\nseed = {seed}\nk_c = {k_c}\npower_iters = {iters}\npower_tol = {tol}\nprobe_every = {probe_every}\n",
                ckpt_path.display(),
                data_dir.display()
            );
            echo(&dir, "bound-check", &body)?;
            let surrogate = Surrogate::from(ckpt);
            if surrogate.history() != 1 {
                return Err(Failure::Usage("the probe needs a single-frame model".into()));
            }
            let frames = data.frames(traj);
            let step_map = |f: &VorticityField| surrogate.step(std::slice::from_ref(f));
            let start = random_direction(data.n(), seed);
            let mut growth: Option<GrowthEstimate> = None;
            let mut growth_rows = Table::new(&["frame", "g_hat", "converged", "iterations"]);
            for k in (0..steps).step_by(probe_every) {
                let est = estimate_growth_factor(&step_map, &frames[k], k_c, &start, iters, tol)?;
                growth_rows.push(vec![k.into(), est.g_hat.into(), Cell::Int(est.converged as i64), est.iterations.into()])?;
                if growth.as_ref().is_none_or(|g| est.g_hat > g.g_hat) {
                    growth = Some(est);
                }
            }
            let growth = growth.expect("steps > 0 probes at least one frame");
            let pairs: Vec<_> = frames[..=steps].windows(2).map(|w| (vec![w[0].clone()], w[1].clone())).collect();
            let delta = measure_delta_hf(&surrogate, &pairs, k_c)?;
            let sim: SimConfig = data.manifest.sim.clone();
            let solver = Solver::from_config(&sim)?;
            let truth = |f: &VorticityField| solver.advance(f, sim.dt, sim.save_every);
            let check = verify_bound(&truth, &step_map, &frames[0], &frames[0], k_c, steps, growth.g_hat, delta.max)?;
            let probe = TheoremProbe { k_c, growth, delta, eps0: check.eps0 };
            let mut horizons: Vec<usize> = [1, 10, steps].into_iter().filter(|&m| m <= steps).collect();
            horizons.dedup();
            write_text(&dir.join("theorem_probe.txt"), &probe.to_text(&horizons))?;
            write_text(&dir.join("bound_check.txt"), &check.to_text())?;
            emit_table(&growth_rows, &dir, "growth", &[Format::Csv])?;
            let held = check.satisfied.iter().filter(|s| **s).count();
            println!(
                "g_hat {} (converged {}), delta_hf {}; measured high-band error within the bound at {held}/{steps} steps (descriptive)",
                fmt_sig(probe.growth.g_hat),
                probe.growth.converged,
                fmt_sig(probe.delta.max)
            );
            Ok(0)
        }
        other => Err(Failure::Usage(format!("unknown mode `{other}` (expected model or synthetic)"))),
    }
}

fn gradcheck(seeds: &[u64], cmd: &Command) -> CliResult<i32> {
    let dir = out_dir(cmd)?;
    echo(&dir, "gradcheck", &format!("seeds = {}\n", join_list(seeds)))?;
    let mut table = Table::new(&["case", "seed", "max_rel_error", "tolerance", "passed", "coords_checked", "coords_skipped"]);
    let mut names = String::new();
    let mut failed = 0;
    let mut row = |table: &mut Table, name: &str, seed: u64, r: &GradCheckReport, tol: f64| -> CliResult<()> {
        let idx = table.rows.len();
        let err = r.max_rel_error;
        let ok = r.passed(tol);
        failed += usize::from(!ok);
        let _ = writeln!(names, "{idx} = {name}");
        println!("{} {name:<22} seed {seed}: max rel error {}", if ok { "PASS" } else { "FAIL" }, fmt_sig(err));
        table.push(vec![
            idx.into(),
            Cell::Int(seed as i64),
            err.into(),
            tol.into(),
            Cell::Int(ok as i64),
            r.coords_checked.into(),
            r.coords_skipped.into(),
        ])?;
        Ok(())
    };
    for c in run_op_checks(seeds)? {
        row(&mut table, c.op, c.seed, &c.report, OP_TOLERANCE)?;
    }
    for &seed in seeds {
        let r = composed_model_check(seed)?;
        row(&mut table, "composed_model", seed, &r, MODEL_TOLERANCE)?;
    }
    emit_table(&table, &dir, "gradcheck", &[Format::Csv])?;
    write_text(&dir.join("gradcheck_cases.txt"), &names)?;
    Ok(if failed == 0 { 0 } else { 1 })
}

fn selftest(cmd: &Command) -> CliResult<i32> {
    let dir = out_dir(cmd)?;
    echo(&dir, "selftest", "")?;
    let checks = run_invariants()?;
    let mut text = String::new();
    for c in &checks {
        let _ = writeln!(text, "{c}");
    }
    print!("{text}");
    write_text(&dir.join("selftest.txt"), &text)?;
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {failed} failed", checks.len());
    Ok(if failed == 0 { 0 } else { 1 })
}
