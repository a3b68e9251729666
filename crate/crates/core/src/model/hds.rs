//! Hierarchical dynamics synthesis: convolutional high- and mid-frequency
//! paths, an attention-based low-frequency path and their gated fusion.

use rand::Rng;

use super::layers::{Conv, GroupNorm, LayerNorm};
use super::params::{Bound, Init};
use crate::error::{Error, Result};
use crate::tensor::{Activation, Conv2dCfg, Graph, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Path {
    High,
    Mid,
    Low,
}

impl Path {
    pub fn name(self) -> &'static str {
        match self {
            Path::High => "high",
            Path::Mid => "mid",
            Path::Low => "low",
        }
    }
}

/// Sizes shared by the HDS paths.
#[derive(Clone, Debug, PartialEq)]
pub struct HdsConfig {
    pub high_blocks: usize,
    pub mid_blocks: usize,
    pub low_blocks: usize,
    pub heads: usize,
    pub mid_dilation: usize,
    /// Channel expansion inside the depth-wise spatial mixer.
    pub spatial_ratio: usize,
    /// Hidden width multiplier of the 1x1 MLPs in the convolutional paths.
    pub mlp_ratio: usize,
    /// Hidden width multiplier of the token MLP in the attention path.
    pub attn_mlp_ratio: usize,
    pub layer_scale_init: f64,
}

impl Default for HdsConfig {
    fn default() -> Self {
        Self {
            high_blocks: 2,
            mid_blocks: 2,
            low_blocks: 2,
            heads: 4,
            mid_dilation: 2,
            spatial_ratio: 4,
            mlp_ratio: 4,
            attn_mlp_ratio: 2,
            layer_scale_init: 1e-6,
        }
    }
}

/// One residual block of a convolutional path:
/// `z + dw(z)`, then `z + pw2(dw_big(pw1(norm(z))))`, then `z + fc2(gelu(fc1(norm(z))))`.
#[derive(Clone, Debug)]
pub(crate) struct ConvBlock {
    pos: Conv,
    norm1: GroupNorm,
    pw1: Conv,
    dw: Conv,
    pw2: Conv,
    norm2: GroupNorm,
    fc1: Conv,
    fc2: Conv,
}

impl ConvBlock {
    fn new<R: Rng>(init: &mut Init<'_, R>, name: &str, d: usize, path: Path, cfg: &HdsConfig, max_groups: usize) -> Self {
        let e = cfg.spatial_ratio * d;
        let h = cfg.mlp_ratio * d;
        let (pos_cfg, big_k, big_cfg) = match path {
            Path::High => (Conv2dCfg::new(1, 1).groups(d), 5, Conv2dCfg::new(1, 2).groups(e)),
            _ => {
                let dil = cfg.mid_dilation;
                (Conv2dCfg::new(1, dil).dilation(dil).groups(d), 3, Conv2dCfg::new(1, dil).dilation(dil).groups(e))
            }
        };
        Self {
            pos: Conv::new(init, &format!("{name}.pos"), d, d, 3, pos_cfg, true, 1.0),
            norm1: GroupNorm::new(init, &format!("{name}.norm1"), d, max_groups),
            pw1: Conv::new(init, &format!("{name}.spatial.pw1"), d, e, 1, Conv2dCfg::default(), true, 1.0),
            dw: Conv::new(init, &format!("{name}.spatial.dw"), e, e, big_k, big_cfg, true, 1.0),
            pw2: Conv::new(init, &format!("{name}.spatial.pw2"), e, d, 1, Conv2dCfg::default(), true, 1.0),
            norm2: GroupNorm::new(init, &format!("{name}.norm2"), d, max_groups),
            fc1: Conv::new(init, &format!("{name}.mlp.fc1"), d, h, 1, Conv2dCfg::default(), true, 1.0),
            fc2: Conv::new(init, &format!("{name}.mlp.fc2"), h, d, 1, Conv2dCfg::default(), true, 1.0),
        }
    }

    fn forward(&self, g: &mut Graph, p: &Bound, z: Var) -> Result<Var> {
        let pos = self.pos.forward(g, p, z)?;
        let z = g.add(z, pos)?;
        let s = self.norm1.forward(g, p, z)?;
        let s = self.pw1.forward(g, p, s)?;
        let s = self.dw.forward(g, p, s)?;
        let s = self.pw2.forward(g, p, s)?;
        let z = g.add(z, s)?;
        let m = self.norm2.forward(g, p, z)?;
        let m = self.fc1.forward(g, p, m)?;
        let m = g.activation(m, Activation::Gelu);
        let m = self.fc2.forward(g, p, m)?;
        g.add(z, m)
    }

    /// Only the depth-wise spatial mixer, for receptive-field probes.
    pub fn spatial_mixer(&self, g: &mut Graph, p: &Bound, z: Var) -> Result<Var> {
        let s = self.pw1.forward(g, p, z)?;
        let s = self.dw.forward(g, p, s)?;
        self.pw2.forward(g, p, s)
    }
}

/// Pre-norm transformer block on tokens with per-channel layer scale.
#[derive(Clone, Debug)]
pub(crate) struct AttnBlock {
    ln1: LayerNorm,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    ls1: usize,
    ln2: LayerNorm,
    fc1_w: usize,
    fc1_b: usize,
    fc2_w: usize,
    fc2_b: usize,
    ls2: usize,
    heads: usize,
}

impl AttnBlock {
    fn new<R: Rng>(init: &mut Init<'_, R>, name: &str, d: usize, cfg: &HdsConfig) -> Self {
        let std = 1.0 / (d as f64).sqrt();
        let h = cfg.attn_mlp_ratio * d;
        Self {
            ln1: LayerNorm::new(init, &format!("{name}.ln1"), d),
            wq: init.normal(format!("{name}.attn.wq"), &[d, d], std),
            wk: init.normal(format!("{name}.attn.wk"), &[d, d], std),
            wv: init.normal(format!("{name}.attn.wv"), &[d, d], std),
            wo: init.normal(format!("{name}.attn.wo"), &[d, d], std),
            ls1: init.constant(format!("{name}.ls1"), &[d], cfg.layer_scale_init),
            ln2: LayerNorm::new(init, &format!("{name}.ln2"), d),
            fc1_w: init.normal(format!("{name}.mlp.fc1.weight"), &[h, d], std),
            fc1_b: init.constant(format!("{name}.mlp.fc1.bias"), &[h], 0.0),
            fc2_w: init.normal(format!("{name}.mlp.fc2.weight"), &[d, h], 1.0 / (h as f64).sqrt()),
            fc2_b: init.constant(format!("{name}.mlp.fc2.bias"), &[d], 0.0),
            ls2: init.constant(format!("{name}.ls2"), &[d], cfg.layer_scale_init),
            heads: cfg.heads,
        }
    }

    fn forward(&self, g: &mut Graph, p: &Bound, t: Var) -> Result<Var> {
        let a = self.ln1.forward(g, p, t)?;
        let a = g.attention(a, p.var(self.wq), p.var(self.wk), p.var(self.wv), p.var(self.wo), self.heads)?;
        let t = g.layer_scale_residual(t, a, p.var(self.ls1), 2)?;
        let m = self.ln2.forward(g, p, t)?;
        let m = g.linear(m, p.var(self.fc1_w), Some(p.var(self.fc1_b)))?;
        let m = g.activation(m, Activation::Gelu);
        let m = g.linear(m, p.var(self.fc2_w), Some(p.var(self.fc2_b)))?;
        g.layer_scale_residual(t, m, p.var(self.ls2), 2)
    }
}

#[derive(Clone, Debug)]
pub(crate) enum PathBlocks {
    Conv(Vec<ConvBlock>),
    Attn(Vec<AttnBlock>),
}

/// Latent evolution by the enabled paths followed by aggregation.
#[derive(Clone, Debug)]
pub(crate) struct Hds {
    paths: Vec<(Path, PathBlocks)>,
    fuse: Conv,
    gates: usize,
}

impl Hds {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, name: &str, d: usize, enabled: &[Path], cfg: &HdsConfig, max_groups: usize) -> Self {
        let mut paths = Vec::new();
        for &path in enabled {
            let prefix = format!("{name}.{}", path.name());
            let blocks = match path {
                Path::High => PathBlocks::Conv(
                    (0..cfg.high_blocks).map(|b| ConvBlock::new(init, &format!("{prefix}.{b}"), d, path, cfg, max_groups)).collect(),
                ),
                Path::Mid => PathBlocks::Conv(
                    (0..cfg.mid_blocks).map(|b| ConvBlock::new(init, &format!("{prefix}.{b}"), d, path, cfg, max_groups)).collect(),
                ),
                Path::Low => {
                    PathBlocks::Attn((0..cfg.low_blocks).map(|b| AttnBlock::new(init, &format!("{prefix}.{b}"), d, cfg)).collect())
                }
            };
            paths.push((path, blocks));
        }
        let k = enabled.len();
        let fuse = Conv::new(init, &format!("{name}.mda.fuse"), k * d, d, 1, Conv2dCfg::default(), true, 1.0);
        let gates = init.constant(format!("{name}.mda.gates"), &[k], 0.0);
        Self { paths, fuse, gates }
    }

    pub fn path_forward(&self, g: &mut Graph, p: &Bound, path: Path, z: Var) -> Result<Var> {
        let (_, blocks) = self
            .paths
            .iter()
            .find(|(q, _)| *q == path)
            .ok_or_else(|| Error::Config(format!("path {} is disabled in this variant", path.name())))?;
        match blocks {
            PathBlocks::Conv(bs) => bs.iter().try_fold(z, |z, b| b.forward(g, p, z)),
            PathBlocks::Attn(bs) => {
                let [_, _, h, w] = g.value(z).dims4()?;
                let t = g.to_tokens(z)?;
                let t = bs.iter().try_fold(t, |t, b| b.forward(g, p, t))?;
                g.from_tokens(t, h, w)
            }
        }
    }

    /// First block's spatial mixer of a convolutional path.
    pub fn spatial_mixer(&self, g: &mut Graph, p: &Bound, path: Path, z: Var) -> Result<Var> {
        match self.paths.iter().find(|(q, _)| *q == path) {
            Some((_, PathBlocks::Conv(bs))) if !bs.is_empty() => bs[0].spatial_mixer(g, p, z),
            _ => Err(Error::Config(format!("no convolutional block on path {}", path.name()))),
        }
    }

    /// `fuse(concat(h)) + Σ softmax(gates)_s h_s`.
    pub fn aggregate(&self, g: &mut Graph, p: &Bound, hs: &[Var]) -> Result<Var> {
        if hs.len() != self.paths.len() {
            return Err(Error::Shape(format!("aggregation expects {} primitives, got {}", self.paths.len(), hs.len())));
        }
        let shape = g.value(hs[0]).shape().to_vec();
        for &h in hs {
            if g.value(h).shape() != shape {
                return Err(Error::Shape(format!("aggregation inputs differ in shape: {:?} vs {shape:?}", g.value(h).shape())));
            }
        }
        let cat = if hs.len() == 1 { hs[0] } else { g.concat(hs)? };
        let fused = self.fuse.forward(g, p, cat)?;
        let w = g.softmax(p.var(self.gates))?;
        let mix = g.weighted_sum(hs, w)?;
        g.add(fused, mix)
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, z: Var) -> Result<Var> {
        let mut hs = Vec::with_capacity(self.paths.len());
        for (path, _) in &self.paths {
            hs.push(self.path_forward(g, p, *path, z)?);
        }
        self.aggregate(g, p, &hs)
    }
}
