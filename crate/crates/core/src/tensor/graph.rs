use super::attention::{mhsa_backward, mhsa_forward, AttentionCache};
use super::conv::{conv2d_backward, conv2d_forward, conv_transpose2d_backward, conv_transpose2d_forward, Conv2dCfg, ConvTranspose2dCfg};
use super::gemm::{gemm, Trans};
use super::norm::{group_norm_backward, group_norm_impl, layer_norm_backward, layer_norm_impl, NormCache};
use super::pointwise::Activation;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, cfg: Conv2dCfg },
    ConvTranspose2d { x: Var, w: Var, b: Option<Var>, cfg: ConvTranspose2dCfg },
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize, cache: NormCache },
    LayerNorm { x: Var, gamma: Var, beta: Var, cache: NormCache },
    Act { x: Var, kind: Activation },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScaleConst { x: Var, c: f64 },
    ScaleAxis { x: Var, scale: Var, axis: usize },
    Concat { xs: Vec<Var>, widths: Vec<usize> },
    ToTokens { x: Var },
    FromTokens { x: Var },
    Linear { x: Var, w: Var, b: Option<Var> },
    Attention { x: Var, w: [Var; 4], cache: Box<AttentionCache> },
    Softmax { x: Var },
    WeightedSum { xs: Vec<Var>, weights: Var },
    Sum { x: Var },
    Mse { pred: Var, target: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only tape. Node order is a topological order by construction.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Sign of every LeakyReLU input on the tape, in node order. Two
    /// evaluations with equal patterns lie on the same smooth piece.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Act { x, kind: Activation::LeakyRelu(_) } = node.op {
                out.extend(self.nodes[x.0].value.data().iter().map(|&v| v >= 0.0));
            }
        }
        out
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        // huge inputs may overflow legitimately; training reports that as a non-finite loss
        if cfg!(debug_assertions) && !value.all_finite() && inputs.iter().all(|v| self.nodes[v.0].value.within_safe_range()) {
            value.debug_check_finite(op_name(&op));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn opt_value(&self, v: Option<Var>) -> Option<&Tensor> {
        v.map(|v| self.value(v))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, cfg: Conv2dCfg) -> Result<Var> {
        let y = conv2d_forward(self.value(x), self.value(w), self.opt_value(b), &cfg)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(y, Op::Conv2d { x, w, b, cfg }, &inputs))
    }

    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, cfg: ConvTranspose2dCfg) -> Result<Var> {
        let y = conv_transpose2d_forward(self.value(x), self.value(w), self.opt_value(b), &cfg)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(y, Op::ConvTranspose2d { x, w, b, cfg }, &inputs))
    }

    pub fn group_norm(&mut self, x: Var, groups: usize, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (y, cache) = group_norm_impl(self.value(x), groups, self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(y, Op::GroupNorm { x, gamma, beta, groups, cache }, &[x, gamma, beta]))
    }

    /// LayerNorm over the trailing axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (y, cache) = layer_norm_impl(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(y, Op::LayerNorm { x, gamma, beta, cache }, &[x, gamma, beta]))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let y = self.value(x).map(|v| kind.apply(v));
        self.push(y, Op::Act { x, kind }, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |p, q| p + q)?;
        Ok(self.push(y, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |p, q| p - q)?;
        Ok(self.push(y, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |p, q| p * q)?;
        Ok(self.push(y, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let y = self.value(x).map(|v| v * c);
        self.push(y, Op::ScaleConst { x, c }, &[x])
    }

    /// Multiply `x` by a vector broadcast along `axis` (one factor per index
    /// of that axis).
    pub fn scale_axis(&mut self, x: Var, scale: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        let sv = self.value(scale);
        let (len, inner) = axis_layout(xv.shape(), axis)?;
        if sv.shape() != [len] {
            return Err(Error::Shape(format!("scale_axis: factor shape {:?} does not match axis {axis} of {:?}", sv.shape(), xv.shape())));
        }
        let s = sv.data();
        let y = Tensor::from_fn(xv.shape(), |i| xv.data()[i] * s[(i / inner) % len]);
        Ok(self.push(y, Op::ScaleAxis { x, scale, axis }, &[x, scale]))
    }

    /// `x + lambda ⊙ fx` with `lambda` broadcast along the channel axis.
    pub fn layer_scale_residual(&mut self, x: Var, fx: Var, lambda: Var, axis: usize) -> Result<Var> {
        let scaled = self.scale_axis(fx, lambda, axis)?;
        self.add(x, scaled)
    }

    /// Concatenate along axis 1.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = self.value(*xs.first().ok_or_else(|| Error::Shape("concat: empty input list".into()))?).shape().to_vec();
        if first.len() < 2 {
            return Err(Error::Shape("concat: inputs must have rank >= 2".into()));
        }
        let mut widths = Vec::with_capacity(xs.len());
        for &v in xs {
            let s = self.value(v).shape();
            if s.len() != first.len() || s[0] != first[0] || s[2..] != first[2..] {
                return Err(Error::Shape(format!("concat: shape {s:?} incompatible with {first:?}")));
            }
            widths.push(s[1]);
        }
        let inner: usize = first[2..].iter().product();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(first[0] * total * inner);
        for b in 0..first[0] {
            for (&v, &w) in xs.iter().zip(&widths) {
                data.extend_from_slice(&self.value(v).data()[b * w * inner..(b + 1) * w * inner]);
            }
        }
        let mut shape = first.clone();
        shape[1] = total;
        let y = Tensor::new(shape, data)?;
        Ok(self.push(y, Op::Concat { xs: xs.to_vec(), widths }, xs))
    }

    /// `[B,C,H,W] -> [B,H*W,C]`.
    pub fn to_tokens(&mut self, x: Var) -> Result<Var> {
        let [b, c, h, w] = self.value(x).dims4()?;
        let y = transpose_last2(self.value(x).data(), b, c, h * w);
        let y = Tensor::new(vec![b, h * w, c], y)?;
        Ok(self.push(y, Op::ToTokens { x }, &[x]))
    }

    /// `[B,H*W,C] -> [B,C,H,W]`.
    pub fn from_tokens(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let [b, n, c] = self.value(x).dims3()?;
        if n != h * w {
            return Err(Error::Shape(format!("from_tokens: {n} tokens cannot form a {h}x{w} map")));
        }
        let y = transpose_last2(self.value(x).data(), b, n, c);
        let y = Tensor::new(vec![b, c, h, w], y)?;
        Ok(self.push(y, Op::FromTokens { x }, &[x]))
    }

    /// Affine map over the trailing axis: `y = x W^T + b`, `W: [out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(w);
        let din = *xv.shape().last().expect("rank >= 1");
        let [dout, w_in] = match wv.shape() {
            [a, b] => [*a, *b],
            s => return Err(Error::Shape(format!("linear: weight must be rank 2, got {s:?}"))),
        };
        if w_in != din {
            return Err(Error::Shape(format!("linear: weight in-features ({w_in}) != input features ({din})")));
        }
        let rows = xv.numel() / din;
        let mut out = vec![0.0; rows * dout];
        gemm(rows, din, dout, 1.0, xv.data(), Trans::No, wv.data(), Trans::Yes, 0.0, &mut out);
        if let Some(bv) = self.opt_value(b) {
            if bv.shape() != [dout] {
                return Err(Error::Shape(format!("linear: bias shape {:?} != [{dout}]", bv.shape())));
            }
            for row in out.chunks_mut(dout) {
                for (o, bb) in row.iter_mut().zip(bv.data()) {
                    *o += bb;
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = dout;
        let y = Tensor::new(shape, out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(y, Op::Linear { x, w, b }, &inputs))
    }

    /// Multi-head self-attention on `[B, N_T, d]` tokens.
    pub fn attention(&mut self, x: Var, wq: Var, wk: Var, wv: Var, wo: Var, heads: usize) -> Result<Var> {
        let (y, cache) = mhsa_forward(self.value(x), self.value(wq), self.value(wk), self.value(wv), self.value(wo), heads)?;
        Ok(self.push(y, Op::Attention { x, w: [wq, wk, wv, wo], cache: Box::new(cache) }, &[x, wq, wk, wv, wo]))
    }

    /// Softmax of a rank-1 tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 1 {
            return Err(Error::Shape(format!("softmax: expected rank 1, got {:?}", xv.shape())));
        }
        let m = xv.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = xv.data().iter().map(|v| (v - m).exp()).collect();
        let z: f64 = e.iter().sum();
        let y = Tensor::new(xv.shape().to_vec(), e.into_iter().map(|v| v / z).collect())?;
        Ok(self.push(y, Op::Softmax { x }, &[x]))
    }

    /// `sum_i weights[i] * xs[i]` for equally-shaped `xs`.
    pub fn weighted_sum(&mut self, xs: &[Var], weights: Var) -> Result<Var> {
        let wv = self.value(weights);
        if wv.shape() != [xs.len()] {
            return Err(Error::Shape(format!("weighted_sum: {} inputs but weight shape {:?}", xs.len(), wv.shape())));
        }
        let first = self.value(xs[0]);
        let mut acc = Tensor::zeros(first.shape());
        for (i, &v) in xs.iter().enumerate() {
            let t = self.value(v);
            acc.expect_same_shape(t)?;
            let w = wv.data()[i];
            for (a, b) in acc.data_mut().iter_mut().zip(t.data()) {
                *a += w * b;
            }
        }
        let mut inputs = xs.to_vec();
        inputs.push(weights);
        Ok(self.push(acc, Op::WeightedSum { xs: xs.to_vec(), weights }, &inputs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        self.push(y, Op::Sum { x }, &[x])
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let p = self.value(pred);
        let t = self.value(target);
        if p.shape() != t.shape() {
            return Err(Error::Shape(format!("mse: prediction shape {:?} != target shape {:?}", p.shape(), t.shape())));
        }
        let n = p.numel() as f64;
        let v = p.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        Ok(self.push(Tensor::scalar(v), Op::Mse { pred, target }, &[pred, target]))
    }

    /// Reverse sweep from a scalar `loss`. A graph supports one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Graph("backward already ran on this graph".into()));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::Graph("loss is not a node of this graph".into()));
        }
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::Graph(format!("backward needs a scalar loss, got shape {:?}", self.nodes[loss.0].value.shape())));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.nodes[loss.0].value.shape()));
        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(dy);
                continue;
            }
            self.backprop_node(i, &dy, &mut grads)?;
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape()));
            } else if !matches!(node.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, dy: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        let mut acc = |v: Var, g: Tensor| {
            if !nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                slot @ None => *slot = Some(g),
            }
        };
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, cfg } => {
                let (dx, dw, db) = conv2d_backward(self.value(*x), self.value(*w), cfg, dy, wants(*x))?;
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                acc(*w, dw);
                if let Some(b) = b {
                    acc(*b, db);
                }
            }
            Op::ConvTranspose2d { x, w, b, cfg } => {
                let (dx, dw, db) = conv_transpose2d_backward(self.value(*x), self.value(*w), cfg, dy, wants(*x))?;
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                acc(*w, dw);
                if let Some(b) = b {
                    acc(*b, db);
                }
            }
            Op::GroupNorm { x, gamma, beta, groups, cache } => {
                let (dx, dg, db) = group_norm_backward(self.value(*x).shape(), *groups, self.value(*gamma), cache, dy)?;
                acc(*x, dx);
                acc(*gamma, dg);
                acc(*beta, db);
            }
            Op::LayerNorm { x, gamma, beta, cache } => {
                let (dx, dg, db) = layer_norm_backward(self.value(*x).shape(), self.value(*gamma), cache, dy)?;
                acc(*x, dx);
                acc(*gamma, dg);
                acc(*beta, db);
            }
            Op::Act { x, kind } => {
                let xv = self.value(*x);
                let dx = Tensor::from_fn(xv.shape(), |j| dy.data()[j] * kind.derivative(xv.data()[j]));
                acc(*x, dx);
            }
            Op::Add(a, b) => {
                acc(*a, dy.clone());
                acc(*b, dy.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, dy.clone());
                acc(*b, dy.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, dy.zip_map(bv, |g, q| g * q)?);
                acc(*b, dy.zip_map(av, |g, p| g * p)?);
            }
            Op::ScaleConst { x, c } => acc(*x, dy.map(|v| v * c)),
            Op::ScaleAxis { x, scale, axis } => {
                let xv = self.value(*x);
                let sv = self.value(*scale);
                let (len, inner) = axis_layout(xv.shape(), *axis)?;
                let s = sv.data();
                let dx = Tensor::from_fn(xv.shape(), |j| dy.data()[j] * s[(j / inner) % len]);
                let mut ds = vec![0.0; len];
                for (j, (&g, &v)) in dy.data().iter().zip(xv.data()).enumerate() {
                    ds[(j / inner) % len] += g * v;
                }
                acc(*x, dx);
                acc(*scale, Tensor::new(vec![len], ds)?);
            }
            Op::Concat { xs, widths } => {
                let shape = dy.shape();
                let inner: usize = shape[2..].iter().product();
                let total = shape[1];
                let mut offset = 0;
                for (&v, &w) in xs.iter().zip(widths) {
                    let mut part = Vec::with_capacity(shape[0] * w * inner);
                    for b in 0..shape[0] {
                        let start = (b * total + offset) * inner;
                        part.extend_from_slice(&dy.data()[start..start + w * inner]);
                    }
                    acc(v, Tensor::new(self.value(v).shape().to_vec(), part)?);
                    offset += w;
                }
            }
            Op::ToTokens { x } => {
                let [b, c, h, w] = self.value(*x).dims4()?;
                let dx = transpose_last2(dy.data(), b, h * w, c);
                acc(*x, Tensor::new(vec![b, c, h, w], dx)?);
            }
            Op::FromTokens { x } => {
                let [b, n, c] = self.value(*x).dims3()?;
                let dx = transpose_last2(dy.data(), b, c, n);
                acc(*x, Tensor::new(vec![b, n, c], dx)?);
            }
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let [dout, din] = [wv.shape()[0], wv.shape()[1]];
                let rows = xv.numel() / din;
                if wants(*x) {
                    let mut dx = vec![0.0; xv.numel()];
                    gemm(rows, dout, din, 1.0, dy.data(), Trans::No, wv.data(), Trans::No, 0.0, &mut dx);
                    acc(*x, Tensor::new(xv.shape().to_vec(), dx)?);
                }
                let mut dw = vec![0.0; dout * din];
                gemm(dout, rows, din, 1.0, dy.data(), Trans::Yes, xv.data(), Trans::No, 0.0, &mut dw);
                acc(*w, Tensor::new(vec![dout, din], dw)?);
                if let Some(b) = b {
                    let mut db = vec![0.0; dout];
                    for row in dy.data().chunks(dout) {
                        for (a, g) in db.iter_mut().zip(row) {
                            *a += g;
                        }
                    }
                    acc(*b, Tensor::new(vec![dout], db)?);
                }
            }
            Op::Attention { x, w, cache } => {
                let weights = [self.value(w[0]), self.value(w[1]), self.value(w[2]), self.value(w[3])];
                let (dx, dws) = mhsa_backward(self.value(*x), weights, cache, dy)?;
                acc(*x, dx);
                for (v, g) in w.iter().zip(dws) {
                    acc(*v, g);
                }
            }
            Op::Softmax { x } => {
                let y = &nodes[i].value;
                let dot = y.dot(dy)?;
                acc(*x, y.zip_map(dy, |p, g| p * (g - dot))?);
            }
            Op::WeightedSum { xs, weights } => {
                let wv = self.value(*weights);
                let mut dw = vec![0.0; xs.len()];
                for (k, &v) in xs.iter().enumerate() {
                    dw[k] = self.value(v).dot(dy)?;
                    let c = wv.data()[k];
                    acc(v, dy.map(|g| g * c));
                }
                acc(*weights, Tensor::new(vec![xs.len()], dw)?);
            }
            Op::Sum { x } => {
                let g = dy.data()[0];
                acc(*x, Tensor::full(self.value(*x).shape(), g));
            }
            Op::Mse { pred, target } => {
                let (p, t) = (self.value(*pred), self.value(*target));
                let scale = 2.0 * dy.data()[0] / p.numel() as f64;
                let dp = p.zip_map(t, |a, b| scale * (a - b))?;
                acc(*target, dp.map(|v| -v));
                acc(*pred, dp);
            }
        }
        Ok(())
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Conv2d { .. } => "conv2d",
        Op::ConvTranspose2d { .. } => "conv_transpose2d",
        Op::GroupNorm { .. } => "group_norm",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Act { .. } => "activation",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::ScaleConst { .. } => "scale",
        Op::ScaleAxis { .. } => "scale_axis",
        Op::Concat { .. } => "concat",
        Op::ToTokens { .. } => "to_tokens",
        Op::FromTokens { .. } => "from_tokens",
        Op::Linear { .. } => "linear",
        Op::Attention { .. } => "attention",
        Op::Softmax { .. } => "softmax",
        Op::WeightedSum { .. } => "weighted_sum",
        Op::Sum { .. } => "sum",
        Op::Mse { .. } => "mse",
    }
}

/// (axis length, product of trailing dims) for broadcasting along `axis`.
fn axis_layout(shape: &[usize], axis: usize) -> Result<(usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Shape(format!("axis {axis} out of range for shape {shape:?}")));
    }
    Ok((shape[axis], shape[axis + 1..].iter().product()))
}

/// Per batch, transpose a `rows x cols` matrix.
fn transpose_last2(src: &[f64], batch: usize, rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    let plane = rows * cols;
    for b in 0..batch {
        let s = &src[b * plane..(b + 1) * plane];
        let d = &mut out[b * plane..(b + 1) * plane];
        for r in 0..rows {
            for c in 0..cols {
                d[c * rows + r] = s[r * cols + c];
            }
        }
    }
    out
}
