//! Multi-grid encoder, hierarchical dynamics synthesis at the coarsest grid,
//! and multi-grid decoder with skip connections. Ablation variants are
//! selected through [`Variant`].

mod hds;
mod layers;
mod params;

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use hds::{HdsConfig, Path};
pub use layers::norm_groups;
pub use params::{Bound, ParamStore};

use crate::error::{Error, Result};
use std::path::{Path as FsPath, PathBuf};

use crate::io::{join_list, load_named, read_text, save_named, write_text, KvMap};
use crate::tensor::{Conv2dCfg, ConvTranspose2dCfg, Graph, Tensor, Var};
use hds::Hds;
use layers::{Conv, ConvNormAct, ConvTNormAct, ResidualConv};
use params::Init;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    NoHds,
    NoMg,
    HighOnly,
    LowOnly,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Full, Variant::NoHds, Variant::NoMg, Variant::HighOnly, Variant::LowOnly];

    /// HDS paths that exist in this variant.
    pub fn paths(self) -> &'static [Path] {
        match self {
            Variant::Full | Variant::NoMg => &[Path::High, Path::Mid, Path::Low],
            Variant::HighOnly => &[Path::High],
            Variant::LowOnly => &[Path::Low],
            Variant::NoHds => &[],
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Full => "full",
            Variant::NoHds => "no_hds",
            Variant::NoMg => "no_mg",
            Variant::HighOnly => "high_only",
            Variant::LowOnly => "low_only",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}` (full, no_hds, no_mg, high_only, low_only)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Input grid size.
    pub n: usize,
    /// Number of stacked input frames.
    pub in_channels: usize,
    /// One encoder stage per stride.
    pub strides: Vec<usize>,
    /// Width at full resolution followed by one width per downsampling stride.
    pub widths: Vec<usize>,
    pub hds: HdsConfig,
    pub variant: Variant,
    /// Upper bound on GroupNorm groups.
    pub norm_groups: usize,
    /// Patch size of the single-grid variant; 0 means the product of the strides.
    pub no_mg_patch: usize,
    /// Depth of the plain convolution stack replacing HDS.
    pub no_hds_layers: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n: 64,
            in_channels: 1,
            strides: vec![1, 2, 1, 2],
            widths: vec![16, 32, 48],
            hds: HdsConfig::default(),
            variant: Variant::Full,
            norm_groups: 8,
            no_mg_patch: 0,
            no_hds_layers: 3,
            seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    /// Width of the features produced by encoder stage `stage` (0 = lift).
    pub fn stage_width(&self, stage: usize) -> usize {
        let downs = self.strides[..stage].iter().filter(|&&s| s > 1).count();
        self.widths[downs]
    }

    pub fn latent_width(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    pub fn total_stride(&self) -> usize {
        self.strides.iter().product()
    }

    pub fn patch(&self) -> usize {
        if self.no_mg_patch == 0 {
            self.total_stride()
        } else {
            self.no_mg_patch
        }
    }

    /// Spatial size of the grid on which HDS runs.
    pub fn latent_size(&self) -> usize {
        match self.variant {
            Variant::NoMg => self.n / self.patch(),
            _ => self.n / self.total_stride(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.strides.is_empty() || self.strides.contains(&0) {
            return bad(format!("strides must be non-empty and positive, got {:?}", self.strides));
        }
        let downs = self.strides.iter().filter(|&&s| s > 1).count();
        if self.widths.len() != downs + 1 {
            return bad(format!(
                "{} widths given but strides {:?} need {} (one plus the number of downsampling stages)",
                self.widths.len(),
                self.strides,
                downs + 1
            ));
        }
        if self.widths.contains(&0) || self.in_channels == 0 {
            return bad("widths and input channels must be positive".into());
        }
        if self.n == 0 || !self.n.is_multiple_of(self.total_stride()) {
            return bad(format!("grid size {} is not divisible by the stride product {}", self.n, self.total_stride()));
        }
        if self.variant == Variant::NoMg && (self.patch() == 0 || !self.n.is_multiple_of(self.patch())) {
            return bad(format!("grid size {} is not divisible by the patch size {}", self.n, self.patch()));
        }
        if self.norm_groups == 0 {
            return bad("norm_groups must be positive".into());
        }
        let d = self.latent_width();
        if self.variant.paths().contains(&Path::Low) && (self.hds.heads == 0 || !d.is_multiple_of(self.hds.heads)) {
            return bad(format!("latent width {d} is not divisible by {} attention heads", self.hds.heads));
        }
        if self.variant.paths().contains(&Path::Mid) && self.hds.mid_dilation == 0 {
            return bad("mid_dilation must be positive".into());
        }
        if self.hds.spatial_ratio == 0 || self.hds.mlp_ratio == 0 || self.hds.attn_mlp_ratio == 0 {
            return bad("HDS expansion ratios must be positive".into());
        }
        Ok(())
    }

    pub fn to_kv(&self, prefix: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{prefix}n = {}", self.n);
        let _ = writeln!(s, "{prefix}in_channels = {}", self.in_channels);
        let _ = writeln!(s, "{prefix}strides = {}", join_list(&self.strides));
        let _ = writeln!(s, "{prefix}widths = {}", join_list(&self.widths));
        let _ = writeln!(s, "{prefix}variant = {}", self.variant);
        let _ = writeln!(s, "{prefix}norm_groups = {}", self.norm_groups);
        let _ = writeln!(s, "{prefix}no_mg_patch = {}", self.no_mg_patch);
        let _ = writeln!(s, "{prefix}no_hds_layers = {}", self.no_hds_layers);
        let _ = writeln!(s, "{prefix}seed = {}", self.seed);
        let h = &self.hds;
        let _ = writeln!(s, "{prefix}hds.high_blocks = {}", h.high_blocks);
        let _ = writeln!(s, "{prefix}hds.mid_blocks = {}", h.mid_blocks);
        let _ = writeln!(s, "{prefix}hds.low_blocks = {}", h.low_blocks);
        let _ = writeln!(s, "{prefix}hds.heads = {}", h.heads);
        let _ = writeln!(s, "{prefix}hds.mid_dilation = {}", h.mid_dilation);
        let _ = writeln!(s, "{prefix}hds.spatial_ratio = {}", h.spatial_ratio);
        let _ = writeln!(s, "{prefix}hds.mlp_ratio = {}", h.mlp_ratio);
        let _ = writeln!(s, "{prefix}hds.attn_mlp_ratio = {}", h.attn_mlp_ratio);
        let _ = writeln!(s, "{prefix}hds.layer_scale_init = {}", h.layer_scale_init);
        s
    }

    /// Apply keys with an optional prefix (e.g. `model.`), leaving others.
    pub fn apply_kv(&mut self, kv: &mut KvMap, prefix: &str) -> Result<()> {
        let k = |name: &str| format!("{prefix}{name}");
        self.n = kv.take_or(&k("n"), self.n)?;
        self.in_channels = kv.take_or(&k("in_channels"), self.in_channels)?;
        if let Some(v) = kv.take_list(&k("strides"))? {
            self.strides = v;
        }
        if let Some(v) = kv.take_list(&k("widths"))? {
            self.widths = v;
        }
        if let Some(v) = kv.take_str(&k("variant")) {
            self.variant = v.parse()?;
        }
        self.norm_groups = kv.take_or(&k("norm_groups"), self.norm_groups)?;
        self.no_mg_patch = kv.take_or(&k("no_mg_patch"), self.no_mg_patch)?;
        self.no_hds_layers = kv.take_or(&k("no_hds_layers"), self.no_hds_layers)?;
        self.seed = kv.take_or(&k("seed"), self.seed)?;
        let h = &mut self.hds;
        h.high_blocks = kv.take_or(&k("hds.high_blocks"), h.high_blocks)?;
        h.mid_blocks = kv.take_or(&k("hds.mid_blocks"), h.mid_blocks)?;
        h.low_blocks = kv.take_or(&k("hds.low_blocks"), h.low_blocks)?;
        h.heads = kv.take_or(&k("hds.heads"), h.heads)?;
        h.mid_dilation = kv.take_or(&k("hds.mid_dilation"), h.mid_dilation)?;
        h.spatial_ratio = kv.take_or(&k("hds.spatial_ratio"), h.spatial_ratio)?;
        h.mlp_ratio = kv.take_or(&k("hds.mlp_ratio"), h.mlp_ratio)?;
        h.attn_mlp_ratio = kv.take_or(&k("hds.attn_mlp_ratio"), h.attn_mlp_ratio)?;
        h.layer_scale_init = kv.take_or(&k("hds.layer_scale_init"), h.layer_scale_init)?;
        Ok(())
    }
}

/// Encoder output: latent per grid level plus the features saved for skips.
#[derive(Clone, Debug)]
pub struct LatentPyramid {
    /// `levels[0]` is the lifted full-resolution map, `levels[l]` the output
    /// of stage `l`.
    pub levels: Vec<Var>,
    /// `skips[l]` is the input of stage `l + 1`.
    pub skips: Vec<Var>,
}

impl LatentPyramid {
    pub fn coarsest(&self) -> Var {
        *self.levels.last().expect("non-empty pyramid")
    }
}

#[derive(Clone, Debug)]
enum Core {
    Hds(Hds),
    Plain(Vec<ConvNormAct>),
}

#[derive(Clone, Debug)]
struct EncoderStage {
    restrict: ConvNormAct,
    transform: ResidualConv,
}

#[derive(Clone, Debug)]
struct DecoderStage {
    prolong: ConvTNormAct,
    refine: ConvNormAct,
}

#[derive(Clone, Debug)]
enum Layout {
    MultiGrid { encoder: Vec<EncoderStage>, decoder: Vec<DecoderStage> },
    SingleGrid { embed: ConvNormAct, unembed: ConvTNormAct, refine: ConvNormAct },
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    lift: ConvNormAct,
    layout: Layout,
    core: Core,
    head: Conv,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut init = Init { store: &mut store, rng: &mut rng };
        let g = config.norm_groups;
        let w0 = config.widths[0];
        let d = config.latent_width();
        let lift = ConvNormAct::new(&mut init, "lift", config.in_channels, w0, 3, Conv2dCfg::new(1, 1), g);
        let layout = if config.variant == Variant::NoMg {
            let p = config.patch();
            let embed = ConvNormAct::new(&mut init, "embed", w0, d, p, Conv2dCfg::new(p, 0), g);
            Layout::SingleGrid {
                embed,
                unembed: ConvTNormAct::new(&mut init, "unembed", d, w0, p, ConvTranspose2dCfg::new(p, 0, 0), g),
                refine: ConvNormAct::new(&mut init, "refine", w0, w0, 3, Conv2dCfg::new(1, 1), g),
            }
        } else {
            let mut encoder = Vec::new();
            for (l, &s) in config.strides.iter().enumerate() {
                let (cin, cout) = (config.stage_width(l), config.stage_width(l + 1));
                encoder.push(EncoderStage {
                    restrict: ConvNormAct::new(&mut init, &format!("enc.{}.restrict", l + 1), cin, cout, 3, Conv2dCfg::new(s, 1), g),
                    transform: ResidualConv::new(&mut init, &format!("enc.{}.transform", l + 1), cout, g),
                });
            }
            let mut decoder = Vec::new();
            for (l, &s) in config.strides.iter().enumerate().rev() {
                let (cin, cout) = (config.stage_width(l + 1), config.stage_width(l));
                decoder.push(DecoderStage {
                    prolong: ConvTNormAct::new(
                        &mut init,
                        &format!("dec.{}.prolong", l + 1),
                        cin,
                        cout,
                        3,
                        ConvTranspose2dCfg::new(s, 1, s - 1),
                        g,
                    ),
                    refine: ConvNormAct::new(&mut init, &format!("dec.{}.refine", l + 1), 2 * cout, cout, 3, Conv2dCfg::new(1, 1), g),
                });
            }
            Layout::MultiGrid { encoder, decoder }
        };
        // The latent core is registered after the grid transfer layers so that
        // variants sharing encoder/decoder shapes also share their initial values.
        let core = match config.variant {
            Variant::NoHds => Core::Plain(
                (0..config.no_hds_layers)
                    .map(|i| ConvNormAct::new(&mut init, &format!("core.{i}"), d, d, 3, Conv2dCfg::new(1, 1), g))
                    .collect(),
            ),
            v => Core::Hds(Hds::new(&mut init, "hds", d, v.paths(), &config.hds, g)),
        };
        let head = Conv::new(&mut init, "head", w0, 1, 1, Conv2dCfg::default(), true, 1.0);
        Ok(Self { config, params: store, lift, layout, core, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    fn check_input(&self, g: &Graph, x: Var) -> Result<()> {
        let [_, c, h, w] = g.value(x).dims4()?;
        if c != self.config.in_channels || h != self.config.n || w != self.config.n {
            return Err(Error::Shape(format!(
                "model expects [B, {}, {n}, {n}] input, got {:?}",
                self.config.in_channels,
                g.value(x).shape(),
                n = self.config.n
            )));
        }
        Ok(())
    }

    pub fn encode(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<LatentPyramid> {
        self.check_input(g, x)?;
        let z0 = self.lift.forward(g, p, x)?;
        let mut levels = vec![z0];
        let mut skips = Vec::new();
        match &self.layout {
            Layout::MultiGrid { encoder, .. } => {
                let mut z = z0;
                for stage in encoder {
                    skips.push(z);
                    z = stage.restrict.forward(g, p, z)?;
                    z = stage.transform.forward(g, p, z)?;
                    levels.push(z);
                }
            }
            Layout::SingleGrid { embed, .. } => {
                levels.push(embed.forward(g, p, z0)?);
            }
        }
        Ok(LatentPyramid { levels, skips })
    }

    /// Latent evolution at the coarsest level.
    pub fn evolve(&self, g: &mut Graph, p: &Bound, z: Var) -> Result<Var> {
        match &self.core {
            Core::Hds(h) => h.forward(g, p, z),
            Core::Plain(layers) => layers.iter().try_fold(z, |z, l| l.forward(g, p, z)),
        }
    }

    /// Reconstruct the output field from an evolved latent and the pyramid's skips.
    pub fn decode(&self, g: &mut Graph, p: &Bound, pyramid: &LatentPyramid, latent: Var) -> Result<Var> {
        let features = match &self.layout {
            Layout::MultiGrid { decoder, .. } => {
                if pyramid.skips.len() != decoder.len() {
                    return Err(Error::Shape(format!(
                        "decoder has {} stages but the pyramid holds {} skips",
                        decoder.len(),
                        pyramid.skips.len()
                    )));
                }
                let mut z = latent;
                for (stage, &skip) in decoder.iter().zip(pyramid.skips.iter().rev()) {
                    z = stage.prolong.forward(g, p, z)?;
                    if g.value(z).shape() != g.value(skip).shape() {
                        return Err(Error::Shape(format!(
                            "prolongated features {:?} do not match skip {:?}",
                            g.value(z).shape(),
                            g.value(skip).shape()
                        )));
                    }
                    let cat = g.concat(&[z, skip])?;
                    z = stage.refine.forward(g, p, cat)?;
                }
                z
            }
            Layout::SingleGrid { unembed, refine, .. } => {
                let z = unembed.forward(g, p, latent)?;
                refine.forward(g, p, z)?
            }
        };
        self.head.forward(g, p, features)
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let pyramid = self.encode(g, p, x)?;
        let z = self.evolve(g, p, pyramid.coarsest())?;
        self.decode(g, p, &pyramid, z)
    }

    /// One HDS path applied to a latent map.
    pub fn hds_path(&self, g: &mut Graph, p: &Bound, path: Path, z: Var) -> Result<Var> {
        match &self.core {
            Core::Hds(h) => h.path_forward(g, p, path, z),
            Core::Plain(_) => Err(Error::Config("this variant has no HDS paths".into())),
        }
    }

    /// Depth-wise spatial mixer of the first block of a convolutional path.
    pub fn hds_spatial_mixer(&self, g: &mut Graph, p: &Bound, path: Path, z: Var) -> Result<Var> {
        match &self.core {
            Core::Hds(h) => h.spatial_mixer(g, p, path, z),
            Core::Plain(_) => Err(Error::Config("this variant has no HDS paths".into())),
        }
    }

    /// Aggregate primitives in the order of [`Variant::paths`].
    pub fn hds_aggregate(&self, g: &mut Graph, p: &Bound, hs: &[Var]) -> Result<Var> {
        match &self.core {
            Core::Hds(h) => h.aggregate(g, p, hs),
            Core::Plain(_) => Err(Error::Config("this variant has no HDS aggregation".into())),
        }
    }

    /// Write weights to `path` and the configuration plus `extra` lines to
    /// the sidecar returned by [`Model::sidecar_path`].
    pub fn save(&self, path: &FsPath, extra: &str) -> Result<()> {
        save_named(path, &self.params.to_named())?;
        write_text(&Self::sidecar_path(path), &format!("{}{extra}", self.config.to_kv("model.")))
    }

    /// Load a checkpoint; sidecar keys outside `model.` are handed back.
    pub fn load(path: &FsPath) -> Result<(Self, KvMap)> {
        let side = Self::sidecar_path(path);
        let mut kv = KvMap::parse(&read_text(&side)?, &side.display().to_string())?;
        let mut config = ModelConfig::default();
        config.apply_kv(&mut kv, "model.")?;
        let mut model = Model::new(config)?;
        model.params.load_named(load_named(path)?)?;
        Ok((model, kv))
    }

    pub fn sidecar_path(path: &FsPath) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".cfg");
        PathBuf::from(s)
    }

    /// Forward pass without gradient tracking.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let y = self.forward(&mut g, &p, xv)?;
        Ok(g.value(y).clone())
    }
}
