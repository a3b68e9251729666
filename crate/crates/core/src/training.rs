//! Single-step supervised training with Adam, global-norm clipping and
//! best-validation checkpointing.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use crate::datasets::{Dataset, Normalization, Split};
use crate::error::{Error, Result};
use crate::io::{fmt_sig, write_text, KvMap};
use crate::model::{Model, ModelConfig};
use crate::tensor::{Graph, Tensor};

pub const LOG_FILE: &str = "train_log.csv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const CONFIG_ECHO: &str = "resolved_config.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from the base rate to zero over all steps.
    Cosine,
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Cosine => "cosine",
        })
    }
}

impl FromStr for LrSchedule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(LrSchedule::Constant),
            "cosine" => Ok(LrSchedule::Cosine),
            _ => Err(Error::Config(format!("unknown lr schedule `{s}` (constant or cosine)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub schedule: LrSchedule,
    /// Global gradient norm limit; 0 disables clipping.
    pub clip_norm: f64,
    /// Write `epoch_XXXX.ckpt` every this many epochs; 0 writes only best and final.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 42,
            schedule: LrSchedule::Constant,
            clip_norm: 1.0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 || self.clip_norm.is_nan() || self.clip_norm < 0.0 {
            return Err(Error::Config("adam_eps must be positive and clip_norm non-negative".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize, total_steps: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let frac = step as f64 / total_steps.max(1) as f64;
                0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * frac.min(1.0)).cos())
            }
        }
    }

    pub fn to_kv(&self, prefix: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{prefix}epochs = {}", self.epochs);
        let _ = writeln!(s, "{prefix}batch_size = {}", self.batch_size);
        let _ = writeln!(s, "{prefix}learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "{prefix}beta1 = {}", self.beta1);
        let _ = writeln!(s, "{prefix}beta2 = {}", self.beta2);
        let _ = writeln!(s, "{prefix}adam_eps = {}", self.adam_eps);
        let _ = writeln!(s, "{prefix}seed = {}", self.seed);
        let _ = writeln!(s, "{prefix}schedule = {}", self.schedule);
        let _ = writeln!(s, "{prefix}clip_norm = {}", self.clip_norm);
        let _ = writeln!(s, "{prefix}checkpoint_every = {}", self.checkpoint_every);
        s
    }

    pub fn apply_kv(&mut self, kv: &mut KvMap, prefix: &str) -> Result<()> {
        let k = |name: &str| format!("{prefix}{name}");
        self.epochs = kv.take_or(&k("epochs"), self.epochs)?;
        self.batch_size = kv.take_or(&k("batch_size"), self.batch_size)?;
        self.learning_rate = kv.take_or(&k("learning_rate"), self.learning_rate)?;
        self.beta1 = kv.take_or(&k("beta1"), self.beta1)?;
        self.beta2 = kv.take_or(&k("beta2"), self.beta2)?;
        self.adam_eps = kv.take_or(&k("adam_eps"), self.adam_eps)?;
        self.seed = kv.take_or(&k("seed"), self.seed)?;
        if let Some(s) = kv.take_str(&k("schedule")) {
            self.schedule = s.parse()?;
        }
        self.clip_norm = kv.take_or(&k("clip_norm"), self.clip_norm)?;
        self.checkpoint_every = kv.take_or(&k("checkpoint_every"), self.checkpoint_every)?;
        Ok(())
    }
}

pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    pred.expect_same_shape(target)?;
    Ok(pred.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.numel() as f64)
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &[Tensor], beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { beta1, beta2, eps, t: 0, m: zeros(), v: zeros() }
    }

    pub fn from_config(params: &[Tensor], cfg: &TrainConfig) -> Self {
        Self::new(params, cfg.beta1, cfg.beta2, cfg.adam_eps)
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "adam: state holds {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            p.expect_same_shape(g)?;
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
            for (i, &gi) in g.data().iter().enumerate() {
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * gi;
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * gi * gi;
                pd[i] -= lr * (md[i] / c1) / ((vd[i] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Rescale `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.data().iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LogSplit {
    /// One optimizer step.
    Train,
    /// Mean training loss of an epoch.
    TrainEpoch,
    Val,
}

impl fmt::Display for LogSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LogSplit::Train => "train",
            LogSplit::TrainEpoch => "train_epoch",
            LogSplit::Val => "val",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub epoch: usize,
    pub split: LogSplit,
    pub loss: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    /// Kept out of the CSV so that logs of identical runs compare equal.
    pub wall_clock_secs: f64,
    pub config_echo: String,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,epoch,split,loss\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.step, r.epoch, r.split, fmt_sig(r.loss));
        }
        s
    }

    pub fn losses(&self, split: LogSplit) -> Vec<f64> {
        self.rows.iter().filter(|r| r.split == split).map(|r| r.loss).collect()
    }
}

fn sample_loss(model: &Model, x: &Tensor, y: &Tensor, grads: bool) -> Result<(f64, Option<Vec<Tensor>>)> {
    let mut g = Graph::new();
    let p = model.params().bind(&mut g, grads);
    let xv = g.constant(x.clone());
    let yv = g.constant(y.clone());
    let pred = model.forward(&mut g, &p, xv)?;
    let loss = g.mse(pred, yv)?;
    let value = g.value(loss).data()[0];
    if !grads {
        return Ok((value, None));
    }
    let mut gr = g.backward(loss)?;
    let out = p
        .vars()
        .iter()
        .map(|&v| gr.take(v).ok_or_else(|| Error::Graph("parameter without gradient".into())))
        .collect::<Result<Vec<_>>>()?;
    Ok((value, Some(out)))
}

/// Worker threads used for a batch: `VORTCAST_THREADS` if set, else the
/// available parallelism. Results do not depend on this number.
pub fn worker_threads() -> usize {
    std::env::var("VORTCAST_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|t| t.get()).unwrap_or(1))
}

fn leading_slice(t: &Tensor, i: usize) -> Result<Tensor> {
    let mut shape = t.shape().to_vec();
    shape[0] = 1;
    t.select_first(i)?.reshape(&shape)
}

/// Loss of one batch; gradients are returned in parameter order when `grads` is set.
///
/// Every sample gets its own graph and the per-sample results are summed in
/// sample order, so the outcome is bit-identical for any thread count.
pub fn batch_loss(model: &Model, x: &Tensor, y: &Tensor, grads: bool) -> Result<(f64, Option<Vec<Tensor>>)> {
    batch_loss_with_threads(model, x, y, grads, worker_threads())
}

/// [`batch_loss`] on an explicit number of worker threads.
pub fn batch_loss_with_threads(model: &Model, x: &Tensor, y: &Tensor, grads: bool, threads: usize) -> Result<(f64, Option<Vec<Tensor>>)> {
    let b = x.shape()[0];
    if y.shape()[0] != b || b == 0 {
        return Err(Error::Shape(format!("batch mismatch: inputs {:?}, targets {:?}", x.shape(), y.shape())));
    }
    type Sample = Result<(f64, Option<Vec<Tensor>>)>;
    let run = |i: usize| -> Sample { sample_loss(model, &leading_slice(x, i)?, &leading_slice(y, i)?, grads) };
    let threads = threads.clamp(1, b);
    let results: Vec<Sample> = if threads <= 1 {
        (0..b).map(run).collect()
    } else {
        let mut slots: Vec<Option<Sample>> = (0..b).map(|_| None).collect();
        std::thread::scope(|scope| {
            let chunk = b.div_ceil(threads);
            for (c, part) in slots.chunks_mut(chunk).enumerate() {
                let run = &run;
                scope.spawn(move || {
                    for (j, slot) in part.iter_mut().enumerate() {
                        *slot = Some(run(c * chunk + j));
                    }
                });
            }
        });
        slots.into_iter().map(|s| s.expect("every sample is visited")).collect()
    };
    let scale = 1.0 / b as f64;
    let mut total = 0.0;
    let mut acc: Option<Vec<Tensor>> = None;
    for r in results {
        let (value, sample_grads) = r?;
        total += value;
        if let Some(sg) = sample_grads {
            match acc.as_mut() {
                None => acc = Some(sg),
                Some(a) => {
                    for (dst, src) in a.iter_mut().zip(&sg) {
                        for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
    if let Some(a) = acc.as_mut() {
        for t in a.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
    Ok((total * scale, acc))
}

/// One optimizer step on a batch; returns the loss before the update.
pub fn train_step(model: &mut Model, adam: &mut Adam, x: &Tensor, y: &Tensor, lr: f64, clip_norm: f64, step: usize) -> Result<f64> {
    let (loss, grads) = batch_loss(model, x, y, true)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { step });
    }
    let mut grads = grads.expect("requested");
    clip_global_norm(&mut grads, clip_norm);
    adam.step(model.params_mut().tensors_mut(), &grads, lr)?;
    Ok(loss)
}

/// Mean squared error over every element of a split, parameters frozen.
pub fn evaluate_loss(model: &Model, data: &Dataset, split: Split, batch_size: usize) -> Result<f64> {
    let history = model.config().in_channels;
    let mut total = 0.0;
    let mut count = 0usize;
    for (x, y) in data.iterate_pairs_with_history(split, batch_size, None, history)? {
        let (loss, _) = batch_loss(model, &x, &y, false)?;
        total += loss * y.numel() as f64;
        count += y.numel();
    }
    Ok(total / count as f64)
}

fn checkpoint_extra(norm: Normalization, epoch: usize) -> String {
    format!("norm.mean = {}\nnorm.std = {}\ntrain.epoch = {epoch}\n", norm.mean, norm.std)
}

/// Model plus the normalization it was trained with.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub normalization: Normalization,
    pub epoch: usize,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        self.model.save(path, &checkpoint_extra(self.normalization, self.epoch))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (model, mut kv) = Model::load(path)?;
        let normalization = Normalization { mean: kv.require("norm.mean")?, std: kv.require("norm.std")? };
        let epoch = kv.take_or("train.epoch", 0)?;
        kv.finish()?;
        Ok(Self { model, normalization, epoch })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub last: Checkpoint,
    pub best: Checkpoint,
    pub best_val_loss: f64,
    pub log: TrainLog,
}

/// Per-epoch progress: `(epoch, mean train loss, val loss)`.
pub type Progress<'a> = &'a mut dyn FnMut(usize, f64, f64);

pub fn train(model_config: &ModelConfig, config: &TrainConfig, data: &Dataset, out: Option<&Path>) -> Result<TrainOutcome> {
    train_with_progress(model_config, config, data, out, &mut |_, _, _| {})
}

pub fn train_with_progress(
    model_config: &ModelConfig,
    config: &TrainConfig,
    data: &Dataset,
    out: Option<&Path>,
    progress: Progress<'_>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if model_config.n != data.n() {
        return Err(Error::Config(format!("model grid {} differs from dataset grid {}", model_config.n, data.n())));
    }
    if data.manifest.train.is_empty() || data.manifest.val.is_empty() {
        return Err(Error::Config("training needs non-empty train and val splits".into()));
    }
    let started = Instant::now();
    let norm = data.normalization();
    let history = model_config.in_channels;
    let mut model = Model::new(model_config.clone())?;
    let mut adam = Adam::from_config(model.params().tensors(), config);
    let echo = format!("{}{}", model_config.to_kv("model."), config.to_kv("train."));
    if let Some(dir) = out {
        write_text(&dir.join(CONFIG_ECHO), &echo)?;
    }
    let pairs = data.pair_index(Split::Train, history).len();
    let steps_per_epoch = pairs.div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let mut log = TrainLog { config_echo: echo, ..TrainLog::default() };
    let mut best = Checkpoint { model: model.clone(), normalization: norm, epoch: 0 };
    let mut best_val = f64::INFINITY;
    let mut step = 0usize;
    for epoch in 1..=config.epochs {
        let shuffle = config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch as u64);
        let mut sum = 0.0;
        let mut seen = 0usize;
        for (x, y) in data.iterate_pairs_with_history(Split::Train, config.batch_size, Some(shuffle), history)? {
            let lr = config.lr_at(step, total_steps);
            step += 1;
            let loss = train_step(&mut model, &mut adam, &x, &y, lr, config.clip_norm, step)?;
            log.rows.push(LogRow { step, epoch, split: LogSplit::Train, loss });
            let b = x.shape()[0];
            sum += loss * b as f64;
            seen += b;
        }
        let train_mean = sum / seen as f64;
        let val = evaluate_loss(&model, data, Split::Val, config.batch_size)?;
        if !val.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        log.rows.push(LogRow { step, epoch, split: LogSplit::TrainEpoch, loss: train_mean });
        log.rows.push(LogRow { step, epoch, split: LogSplit::Val, loss: val });
        if val < best_val {
            best_val = val;
            best = Checkpoint { model: model.clone(), normalization: norm, epoch };
        }
        if let Some(dir) = out {
            if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 {
                Checkpoint { model: model.clone(), normalization: norm, epoch }.save(&dir.join(format!("epoch_{epoch:04}.ckpt")))?;
            }
        }
        progress(epoch, train_mean, val);
    }
    log.wall_clock_secs = started.elapsed().as_secs_f64();
    let last = Checkpoint { model, normalization: norm, epoch: config.epochs };
    if let Some(dir) = out {
        last.save(&dir.join(FINAL_CHECKPOINT))?;
        best.save(&dir.join(BEST_CHECKPOINT))?;
        write_text(&dir.join(LOG_FILE), &log.to_csv())?;
    }
    Ok(TrainOutcome { last, best, best_val_loss: best_val, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HdsConfig, Variant};
    use crate::tensor::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mse_cases() {
        let t = Tensor::from_fn(&[2, 3], |i| i as f64);
        assert_eq!(mse_loss(&t, &t).unwrap(), 0.0);
        assert_eq!(mse_loss(&t.map(|x| x + 1.0), &t).unwrap(), 1.0);
        assert!(mse_loss(&t, &Tensor::zeros(&[3, 2])).is_err());
    }

    #[test]
    fn mse_gradient_is_two_residual_over_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let t = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let mut g = Graph::new();
        let pv = g.param(p.clone());
        let tv = g.constant(t.clone());
        let l = g.mse(pv, tv).unwrap();
        let grad = g.backward(l).unwrap().take(pv).unwrap();
        for i in 0..12 {
            let expect = 2.0 * (p.data()[i] - t.data()[i]) / 12.0;
            assert!((grad.data()[i] - expect).abs() < 1e-15);
        }
        let report = grad_check(
            |g, v| {
                let tv = g.constant(t.clone());
                g.mse(v[0], tv)
            },
            &[p],
            1e-6,
            None,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8);
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut params = vec![Tensor::from_fn(&[5], |i| i as f64)];
        let before = params.clone();
        let mut adam = Adam::new(&params, 0.9, 0.999, 1e-8);
        for _ in 0..3 {
            adam.step(&mut params, &[Tensor::zeros(&[5])], 0.1).unwrap();
        }
        assert_eq!(params, before);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut params = vec![Tensor::zeros(&[4])];
        let g = Tensor::new(vec![4], vec![3.0, -0.5, 1e-3, -20.0]).unwrap();
        let mut adam = Adam::new(&params, 0.9, 0.999, 1e-8);
        adam.step(&mut params, std::slice::from_ref(&g), 0.01).unwrap();
        for (p, gi) in params[0].data().iter().zip(g.data()) {
            // m̂ = g, v̂ = g², so the update is lr·g/(|g|+eps)
            let expect = -0.01 * gi / (gi.abs() + 1e-8);
            assert!((p - expect).abs() < 1e-15, "{p} {expect}");
            assert!((p.abs() - 0.01).abs() < 1e-7);
        }
    }

    #[test]
    fn clipping_scales_to_limit() {
        let mut g = vec![Tensor::full(&[3], 2.0), Tensor::full(&[1], 2.0)];
        let norm = clip_global_norm(&mut g, 1.0);
        assert!((norm - 4.0).abs() < 1e-15);
        let after = g.iter().map(|t| t.data().iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
        assert!((after - 1.0).abs() < 1e-15);
        let mut small = vec![Tensor::full(&[2], 0.1)];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].data(), &[0.1, 0.1]);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let c = TrainConfig { schedule: LrSchedule::Cosine, ..TrainConfig::default() };
        assert_eq!(c.lr_at(0, 100), 1e-3);
        assert!((c.lr_at(50, 100) - 5e-4).abs() < 1e-15);
        assert!(c.lr_at(100, 100).abs() < 1e-18);
        assert_eq!(TrainConfig::default().lr_at(70, 100), 1e-3);
    }

    #[test]
    fn config_kv_round_trip_and_validation() {
        let c = TrainConfig { epochs: 3, schedule: LrSchedule::Cosine, learning_rate: 3e-4, ..TrainConfig::default() };
        let mut kv = KvMap::parse(&c.to_kv("train."), "t").unwrap();
        let mut back = TrainConfig::default();
        back.apply_kv(&mut kv, "train.").unwrap();
        kv.finish().unwrap();
        assert_eq!(back, c);
        assert!(TrainConfig { learning_rate: 0.0, ..c.clone() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..c }.validate().is_err());
    }

    #[test]
    fn overfits_a_single_pair() {
        let cfg = ModelConfig {
            n: 16,
            widths: vec![4, 8, 8],
            hds: HdsConfig { heads: 2, ..HdsConfig::default() },
            variant: Variant::Full,
            ..ModelConfig::default()
        };
        let mut model = Model::new(cfg).unwrap();
        let x = Tensor::from_fn(&[1, 1, 16, 16], |i| {
            let (r, c) = ((i / 16) as f64, (i % 16) as f64);
            (std::f64::consts::TAU * r / 16.0).sin() + (std::f64::consts::TAU * 2.0 * c / 16.0).cos()
        });
        let y = x.map(|v| 0.8 * v);
        let mut adam = Adam::from_config(model.params().tensors(), &TrainConfig::default());
        let first = batch_loss(&model, &x, &y, false).unwrap().0;
        for step in 1..=500 {
            train_step(&mut model, &mut adam, &x, &y, 1e-3, 1.0, step).unwrap();
        }
        let last = batch_loss(&model, &x, &y, false).unwrap().0;
        assert!(first / last >= 100.0, "{first} -> {last}");
    }
}
