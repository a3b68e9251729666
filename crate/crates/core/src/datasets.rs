//! Trajectory datasets: generation, the plain-text manifest, global z-score
//! normalization and shuffled `(input, target)` pair batches.

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dns::{simulate, SimConfig, Trajectory};
use crate::error::{Error, Result};
use crate::field::VorticityField;
use crate::io::{self, join_list, KvMap};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    Decaying,
    Forced,
}

impl Regime {
    pub fn sim_config(self, n: usize) -> SimConfig {
        match self {
            Regime::Decaying => SimConfig::decaying(n),
            Regime::Forced => SimConfig::forced(n),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Decaying => "decaying",
            Regime::Forced => "forced",
        })
    }
}

impl FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "decaying" => Ok(Regime::Decaying),
            "forced" => Ok(Regime::Forced),
            _ => Err(Error::Config(format!("unknown regime `{s}` (expected decaying or forced)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split `{s}`"))),
        }
    }
}

/// Global affine z-score map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

impl Normalization {
    pub const IDENTITY: Normalization = Normalization { mean: 0.0, std: 1.0 };

    pub fn fit<'a>(samples: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let (mut count, mut sum) = (0usize, 0.0);
        let chunks: Vec<&[f64]> = samples.into_iter().collect();
        for c in &chunks {
            count += c.len();
            sum += c.iter().sum::<f64>();
        }
        if count == 0 {
            return Err(Error::InvalidArgument("cannot fit normalization to no samples".into()));
        }
        let mean = sum / count as f64;
        let var = chunks.iter().flat_map(|c| c.iter()).map(|v| (v - mean) * (v - mean)).sum::<f64>() / count as f64;
        let std = var.sqrt();
        if std.is_nan() || std <= 0.0 {
            return Err(Error::InvalidArgument("training frames have zero variance".into()));
        }
        Ok(Self { mean, std })
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn denormalize(&self, x: f64) -> f64 {
        x * self.std + self.mean
    }

    pub fn normalize_tensor(&self, t: &Tensor) -> Tensor {
        t.map(|v| self.normalize(v))
    }

    pub fn denormalize_tensor(&self, t: &Tensor) -> Tensor {
        t.map(|v| self.denormalize(v))
    }

    pub fn normalize_field(&self, f: &VorticityField) -> VorticityField {
        let vals = f.values().iter().map(|&v| self.normalize(v)).collect();
        VorticityField::new(f.n(), vals).expect("same size").with_time(f.time)
    }

    pub fn denormalize_field(&self, f: &VorticityField) -> VorticityField {
        let vals = f.values().iter().map(|&v| self.denormalize(v)).collect();
        VorticityField::new(f.n(), vals).expect("same size").with_time(f.time)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub regime: Regime,
    pub n: usize,
    pub seed: u64,
    pub trajectory_files: Vec<String>,
    pub frames_per_trajectory: usize,
    pub dt_between_saves: f64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub normalization: Normalization,
    /// Simulation settings shared by every trajectory (per-trajectory seeds are `seed + i`).
    pub sim: SimConfig,
}

/// `(train, val, test)` trajectory counts: validation and test each get a
/// tenth of the trajectories, at least one.
pub fn split_counts(n_trajectories: usize) -> Result<(usize, usize, usize)> {
    if n_trajectories < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 trajectories for a train/val/test split, got {n_trajectories}")));
    }
    let held = (n_trajectories / 10).max(1);
    Ok((n_trajectories - 2 * held, held, held))
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "regime = {}", self.regime);
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "frames_per_trajectory = {}", self.frames_per_trajectory);
        let _ = writeln!(s, "dt_between_saves = {}", self.dt_between_saves);
        let _ = writeln!(s, "trajectories = {}", self.trajectory_files.join(","));
        let _ = writeln!(s, "train = {}", join_list(&self.train));
        let _ = writeln!(s, "val = {}", join_list(&self.val));
        let _ = writeln!(s, "test = {}", join_list(&self.test));
        let _ = writeln!(s, "norm_mean = {}", self.normalization.mean);
        let _ = writeln!(s, "norm_std = {}", self.normalization.std);
        for line in self.sim.to_kv().lines() {
            let _ = writeln!(s, "sim.{line}");
        }
        s
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut kv = KvMap::parse(text, origin)?;
        let regime: Regime = kv.require::<String>("regime")?.parse()?;
        let n = kv.require("n")?;
        let seed = kv.require("seed")?;
        let frames_per_trajectory = kv.require("frames_per_trajectory")?;
        let dt_between_saves = kv.require("dt_between_saves")?;
        let trajectory_files: Vec<String> = kv.take_list("trajectories")?.unwrap_or_default();
        let train = kv.take_list("train")?.unwrap_or_default();
        let val = kv.take_list("val")?.unwrap_or_default();
        let test = kv.take_list("test")?.unwrap_or_default();
        let normalization = Normalization { mean: kv.require("norm_mean")?, std: kv.require("norm_std")? };
        let sim_text: String = {
            let keys: Vec<String> = [
                "n",
                "nu",
                "dt",
                "forcing",
                "forcing_amplitude",
                "forcing_wavenumber",
                "save_every",
                "steps",
                "seed",
                "spinup_steps",
                "init",
                "k0",
                "tau0",
                "target_energy",
                "tau",
                "alpha",
            ]
            .iter()
            .map(|k| format!("sim.{k}"))
            .collect();
            let mut out = String::new();
            for k in keys {
                if let Some(v) = kv.take_str(&k) {
                    let _ = writeln!(out, "{} = {v}", &k[4..]);
                }
            }
            out
        };
        kv.finish()?;
        let mut sim_kv = KvMap::parse(&sim_text, origin)?;
        let mut sim = regime.sim_config(n);
        sim.apply_kv(&mut sim_kv)?;
        sim_kv.finish()?;
        let m = Self { regime, n, seed, trajectory_files, frames_per_trajectory, dt_between_saves, train, val, test, normalization, sim };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let total = self.trajectory_files.len();
        let mut seen = vec![false; total];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= total {
                return Err(Error::Config(format!("split index {i} out of range ({total} trajectories)")));
            }
            if seen[i] {
                return Err(Error::Config(format!("trajectory {i} appears in more than one split")));
            }
            seen[i] = true;
        }
        if self.normalization.std.is_nan() || self.normalization.std <= 0.0 {
            return Err(Error::Config("normalization std must be positive".into()));
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        io::write_text(&dir.join(MANIFEST_FILE), &self.to_text())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        Self::parse(&io::read_text(&path)?, &path.display().to_string())
    }
}

/// Frames of a trajectory as a `[T, n, n]` tensor.
pub fn trajectory_tensor(traj: &Trajectory) -> Result<Tensor> {
    let n = traj.config.n;
    let mut data = Vec::with_capacity(traj.frames.len() * n * n);
    for f in &traj.frames {
        data.extend_from_slice(f.values());
    }
    Tensor::new(vec![traj.frames.len(), n, n], data)
}

fn trajectory_sidecar(traj: &Trajectory) -> String {
    let mut s = traj.config.to_kv();
    let _ = writeln!(s, "dt_between_saves = {}", traj.dt_between_saves);
    s.push_str("\n# energy series\n");
    for line in traj.series_csv().lines() {
        let _ = writeln!(s, "# {line}");
    }
    s
}

/// Simulate `n_trajectories` runs (trajectory `i` seeded with `seed + i`),
/// write them under `out_dir` with a manifest, and return the manifest.
pub fn generate_dataset(
    regime: Regime,
    n_trajectories: usize,
    frames: usize,
    sim_config: &SimConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    let (n_train, n_val, _) = split_counts(n_trajectories)?;
    if frames < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 frames per trajectory, got {frames}")));
    }
    let mut sim = sim_config.clone();
    sim.steps = (frames - 1) * sim.save_every;
    sim.seed = seed;
    sim.validate()?;
    let mut files = Vec::with_capacity(n_trajectories);
    let mut train_frames: Vec<Tensor> = Vec::new();
    for i in 0..n_trajectories {
        let mut cfg = sim.clone();
        cfg.seed = seed.wrapping_add(i as u64);
        let traj = simulate(&cfg)?;
        let name = format!("traj_{i:04}.tl1t");
        let tensor = trajectory_tensor(&traj)?;
        io::save_tensor(&out_dir.join(&name), &tensor)?;
        io::write_text(&out_dir.join(format!("traj_{i:04}.meta")), &trajectory_sidecar(&traj))?;
        if i < n_train {
            train_frames.push(io::load_tensor(&out_dir.join(&name))?);
        }
        files.push(name);
    }
    let normalization = Normalization::fit(train_frames.iter().map(|t| t.data()))?;
    let manifest = DatasetManifest {
        regime,
        n: sim.n,
        seed,
        trajectory_files: files,
        frames_per_trajectory: frames,
        dt_between_saves: sim.dt * sim.save_every as f64,
        train: (0..n_train).collect(),
        val: (n_train..n_train + n_val).collect(),
        test: (n_train + n_val..n_trajectories).collect(),
        normalization,
        sim,
    };
    manifest.write(out_dir)?;
    Ok(manifest)
}

/// A manifest with its trajectories loaded, in physical units.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    trajectories: Vec<Tensor>,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = DatasetManifest::read(dir)?;
        let mut trajectories = Vec::with_capacity(manifest.trajectory_files.len());
        for f in &manifest.trajectory_files {
            let path: PathBuf = dir.join(f);
            let t = io::load_tensor(&path)?;
            let [frames, h, w] = t.dims3().map_err(|e| Error::format(&path, e.to_string()))?;
            if h != manifest.n || w != manifest.n || frames != manifest.frames_per_trajectory {
                return Err(Error::format(&path, format!("shape {:?} disagrees with manifest", t.shape())));
            }
            trajectories.push(t);
        }
        Ok(Self { manifest, trajectories })
    }

    /// In-memory dataset; each tensor is `[T, n, n]`.
    pub fn from_parts(manifest: DatasetManifest, trajectories: Vec<Tensor>) -> Result<Self> {
        manifest.validate()?;
        if trajectories.len() != manifest.trajectory_files.len() {
            return Err(Error::InvalidArgument("one tensor per manifest trajectory required".into()));
        }
        for t in &trajectories {
            let [frames, h, w] = t.dims3()?;
            if h != manifest.n || w != manifest.n || frames != manifest.frames_per_trajectory {
                return Err(Error::Shape(format!("trajectory shape {:?} disagrees with manifest", t.shape())));
            }
        }
        Ok(Self { manifest, trajectories })
    }

    pub fn n(&self) -> usize {
        self.manifest.n
    }

    pub fn normalization(&self) -> Normalization {
        self.manifest.normalization
    }

    pub fn trajectory(&self, index: usize) -> &Tensor {
        &self.trajectories[index]
    }

    pub fn frame(&self, traj: usize, index: usize) -> VorticityField {
        let n = self.manifest.n;
        let vals = self.trajectories[traj].data()[index * n * n..(index + 1) * n * n].to_vec();
        VorticityField::new(n, vals).expect("n*n values").with_time(index as f64 * self.manifest.dt_between_saves)
    }

    pub fn frames(&self, traj: usize) -> Vec<VorticityField> {
        (0..self.manifest.frames_per_trajectory).map(|i| self.frame(traj, i)).collect()
    }

    /// `(trajectory, first input frame)` for every pair in a split.
    pub fn pair_index(&self, split: Split, history: usize) -> Vec<(usize, usize)> {
        let frames = self.manifest.frames_per_trajectory;
        let mut out = Vec::new();
        for &t in self.manifest.split(split) {
            for start in 0..frames.saturating_sub(history) {
                out.push((t, start));
            }
        }
        out
    }

    /// Normalized `(input [B,1,n,n], target [B,1,n,n])` batches covering each
    /// consecutive frame pair of the split once. `shuffle_seed` of `None`
    /// keeps trajectory order.
    pub fn iterate_pairs(&self, split: Split, batch_size: usize, shuffle_seed: Option<u64>) -> Result<PairBatches<'_>> {
        self.iterate_pairs_with_history(split, batch_size, shuffle_seed, 1)
    }

    /// As [`Dataset::iterate_pairs`] with the `history` most recent frames
    /// stacked as input channels.
    pub fn iterate_pairs_with_history(
        &self,
        split: Split,
        batch_size: usize,
        shuffle_seed: Option<u64>,
        history: usize,
    ) -> Result<PairBatches<'_>> {
        if batch_size == 0 || history == 0 {
            return Err(Error::InvalidArgument("batch size and history must be at least 1".into()));
        }
        let mut order = self.pair_index(split, history);
        if order.is_empty() {
            return Err(Error::InvalidArgument(format!("split {split:?} has no pairs")));
        }
        if let Some(seed) = shuffle_seed {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        Ok(PairBatches { data: self, order, pos: 0, batch_size, history })
    }
}

pub struct PairBatches<'a> {
    data: &'a Dataset,
    order: Vec<(usize, usize)>,
    pos: usize,
    batch_size: usize,
    history: usize,
}

impl PairBatches<'_> {
    pub fn pair_count(&self) -> usize {
        self.order.len()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.order
    }
}

impl Iterator for PairBatches<'_> {
    type Item = (Tensor, Tensor);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let n = self.data.n();
        let nn = n * n;
        let norm = self.data.normalization();
        let b = end - self.pos;
        let mut input = Vec::with_capacity(b * self.history * nn);
        let mut target = Vec::with_capacity(b * nn);
        for &(t, start) in &self.order[self.pos..end] {
            let frames = self.data.trajectory(t).data();
            for h in 0..self.history {
                let f = start + h;
                input.extend(frames[f * nn..(f + 1) * nn].iter().map(|&v| norm.normalize(v)));
            }
            let f = start + self.history;
            target.extend(frames[f * nn..(f + 1) * nn].iter().map(|&v| norm.normalize(v)));
        }
        self.pos = end;
        Some((Tensor::new(vec![b, self.history, n, n], input).expect("sized"), Tensor::new(vec![b, 1, n, n], target).expect("sized")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset(n_traj: usize, frames: usize) -> Dataset {
        let n = 4;
        let (tr, va, _) = split_counts(n_traj).unwrap();
        let trajectories: Vec<Tensor> = (0..n_traj).map(|t| Tensor::from_fn(&[frames, n, n], |i| (t * 1000 + i) as f64)).collect();
        let normalization = Normalization::fit(trajectories[..tr].iter().map(|t| t.data())).unwrap();
        let manifest = DatasetManifest {
            regime: Regime::Decaying,
            n,
            seed: 1,
            trajectory_files: (0..n_traj).map(|i| format!("traj_{i:04}.tl1t")).collect(),
            frames_per_trajectory: frames,
            dt_between_saves: 0.1,
            train: (0..tr).collect(),
            val: (tr..tr + va).collect(),
            test: (tr + va..n_traj).collect(),
            normalization,
            sim: SimConfig::decaying(n),
        };
        Dataset::from_parts(manifest, trajectories).unwrap()
    }

    #[test]
    fn split_sizes() {
        assert_eq!(split_counts(10).unwrap(), (8, 1, 1));
        assert_eq!(split_counts(24).unwrap(), (20, 2, 2));
        assert_eq!(split_counts(3).unwrap(), (1, 1, 1));
        assert!(split_counts(2).is_err());
    }

    #[test]
    fn pair_counts_and_coverage() {
        let d = toy_dataset(3, 5);
        let it = d.iterate_pairs(Split::Train, 3, Some(7)).unwrap();
        assert_eq!(it.pair_count(), 4);
        let batches: Vec<_> = it.collect();
        assert_eq!(batches.len(), 2);
        assert_eq!(batches[1].0.shape(), &[1, 1, 4, 4]);
        let norm = d.normalization();
        let mut starts: Vec<f64> = batches
            .iter()
            .flat_map(|(x, y)| {
                let b = x.shape()[0];
                (0..b).map(move |i| {
                    let xi = norm.denormalize(x.data()[i * 16]);
                    let yi = norm.denormalize(y.data()[i * 16]);
                    assert!((yi - xi - 16.0).abs() < 1e-9);
                    xi
                })
            })
            .collect();
        starts.sort_by(f64::total_cmp);
        let expected = [0.0, 16.0, 32.0, 48.0];
        for (s, e) in starts.iter().zip(expected) {
            assert!((s - e).abs() < 1e-9);
        }
    }

    #[test]
    fn shuffle_is_reproducible() {
        let d = toy_dataset(10, 6);
        let a: Vec<_> = d.iterate_pairs(Split::Train, 4, Some(3)).unwrap().pairs().to_vec();
        let b: Vec<_> = d.iterate_pairs(Split::Train, 4, Some(3)).unwrap().pairs().to_vec();
        let c: Vec<_> = d.iterate_pairs(Split::Train, 4, Some(4)).unwrap().pairs().to_vec();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 8 * 5);
    }

    #[test]
    fn test_frames_never_in_training_pairs() {
        let d = toy_dataset(10, 6);
        let test: Vec<usize> = d.manifest.test.clone();
        let pairs = d.iterate_pairs(Split::Train, 4, Some(1)).unwrap();
        assert!(pairs.pairs().iter().all(|(t, _)| !test.contains(t)));
    }

    #[test]
    fn history_stacks_channels() {
        let d = toy_dataset(3, 5);
        let mut it = d.iterate_pairs_with_history(Split::Train, 8, None, 2).unwrap();
        assert_eq!(it.pair_count(), 3);
        let (x, y) = it.next().unwrap();
        assert_eq!(x.shape(), &[3, 2, 4, 4]);
        assert_eq!(y.shape(), &[3, 1, 4, 4]);
    }

    #[test]
    fn normalization_inverts() {
        let norm = Normalization { mean: 0.3, std: 2.5 };
        for x in [-3.0, 0.0, 1.7, 1e3] {
            assert!((norm.denormalize(norm.normalize(x)) - x).abs() < 1e-12);
        }
        assert!(Normalization::fit([[1.0, 1.0].as_slice()]).is_err());
    }

    #[test]
    fn manifest_text_round_trip() {
        let d = toy_dataset(10, 6);
        let back = DatasetManifest::parse(&d.manifest.to_text(), "m").unwrap();
        assert_eq!(back, d.manifest);
        let mut bad = d.manifest.clone();
        bad.val = vec![0];
        assert!(bad.validate().is_err());
    }
}
