use rand::Rng;

use super::params::{Bound, Init};
use crate::error::Result;
use crate::tensor::{Activation, Conv2dCfg, ConvTranspose2dCfg, Graph, Var};

pub(crate) const GN_EPS: f64 = 1e-5;
pub(crate) const LN_EPS: f64 = 1e-5;
const LEAKY_GAIN: f64 = std::f64::consts::SQRT_2;

/// Largest divisor of `channels` not exceeding `max_groups`.
pub fn norm_groups(channels: usize, max_groups: usize) -> usize {
    (1..=max_groups.min(channels)).rev().find(|g| channels.is_multiple_of(*g)).unwrap_or(1)
}

#[derive(Clone, Debug)]
pub(crate) struct Conv {
    w: usize,
    b: Option<usize>,
    cfg: Conv2dCfg,
}

impl Conv {
    /// `gain` scales the fan-in normal initialization.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        init: &mut Init<'_, R>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        cfg: Conv2dCfg,
        bias: bool,
        gain: f64,
    ) -> Self {
        let cin_g = cin / cfg.groups;
        let fan_in = (cin_g * k * k) as f64;
        let w = init.normal(format!("{name}.weight"), &[cout, cin_g, k, k], gain / fan_in.sqrt());
        let b = bias.then(|| init.constant(format!("{name}.bias"), &[cout], 0.0));
        Self { w, b, cfg }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.conv2d(x, p.var(self.w), self.b.map(|b| p.var(b)), self.cfg)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct ConvT {
    w: usize,
    b: Option<usize>,
    cfg: ConvTranspose2dCfg,
}

impl ConvT {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, name: &str, cin: usize, cout: usize, k: usize, cfg: ConvTranspose2dCfg, gain: f64) -> Self {
        let fan_in = (cin * k * k) as f64 / (cfg.stride * cfg.stride) as f64;
        let w = init.normal(format!("{name}.weight"), &[cin, cout, k, k], gain / fan_in.max(1.0).sqrt());
        let b = Some(init.constant(format!("{name}.bias"), &[cout], 0.0));
        Self { w, b, cfg }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.conv_transpose2d(x, p.var(self.w), self.b.map(|b| p.var(b)), self.cfg)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct GroupNorm {
    gamma: usize,
    beta: usize,
    groups: usize,
}

impl GroupNorm {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, name: &str, channels: usize, max_groups: usize) -> Self {
        Self {
            gamma: init.constant(format!("{name}.gamma"), &[channels], 1.0),
            beta: init.constant(format!("{name}.beta"), &[channels], 0.0),
            groups: norm_groups(channels, max_groups),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.group_norm(x, self.groups, p.var(self.gamma), p.var(self.beta), GN_EPS)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LayerNorm {
    gamma: usize,
    beta: usize,
}

impl LayerNorm {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, name: &str, dim: usize) -> Self {
        Self { gamma: init.constant(format!("{name}.gamma"), &[dim], 1.0), beta: init.constant(format!("{name}.beta"), &[dim], 0.0) }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.layer_norm(x, p.var(self.gamma), p.var(self.beta), LN_EPS)
    }
}

/// Convolution, GroupNorm, LeakyReLU.
#[derive(Clone, Debug)]
pub(crate) struct ConvNormAct {
    conv: Conv,
    norm: GroupNorm,
}

impl ConvNormAct {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(init: &mut Init<'_, R>, name: &str, cin: usize, cout: usize, k: usize, cfg: Conv2dCfg, max_groups: usize) -> Self {
        Self {
            conv: Conv::new(init, &format!("{name}.conv"), cin, cout, k, cfg, true, LEAKY_GAIN),
            norm: GroupNorm::new(init, &format!("{name}.norm"), cout, max_groups),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let y = self.conv.forward(g, p, x)?;
        let y = self.norm.forward(g, p, y)?;
        Ok(g.activation(y, Activation::DEFAULT_LEAKY))
    }
}

/// Transposed convolution, GroupNorm, LeakyReLU.
#[derive(Clone, Debug)]
pub(crate) struct ConvTNormAct {
    conv: ConvT,
    norm: GroupNorm,
}

impl ConvTNormAct {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        init: &mut Init<'_, R>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        cfg: ConvTranspose2dCfg,
        max_groups: usize,
    ) -> Self {
        Self {
            conv: ConvT::new(init, &format!("{name}.conv"), cin, cout, k, cfg, LEAKY_GAIN),
            norm: GroupNorm::new(init, &format!("{name}.norm"), cout, max_groups),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let y = self.conv.forward(g, p, x)?;
        let y = self.norm.forward(g, p, y)?;
        Ok(g.activation(y, Activation::DEFAULT_LEAKY))
    }
}

/// `x + act(norm(conv3x3(x)))`.
#[derive(Clone, Debug)]
pub(crate) struct ResidualConv {
    body: ConvNormAct,
}

impl ResidualConv {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, name: &str, channels: usize, max_groups: usize) -> Self {
        Self { body: ConvNormAct::new(init, name, channels, channels, 3, Conv2dCfg::new(1, 1), max_groups) }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let y = self.body.forward(g, p, x)?;
        g.add(x, y)
    }
}
