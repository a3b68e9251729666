//! Dense row-major tensors and a tape-based reverse-mode differentiation
//! engine covering the layer set used by the surrogate model.
//!
//! Values are stored as `f64`. A [`Graph`] records every operation applied
//! to its [`Var`] handles; [`Graph::backward`] replays the tape once in
//! reverse and returns the gradients of every leaf that asked for one.

mod attention;
mod conv;
pub(crate) mod gemm;
mod grad_check;
mod graph;
mod norm;
mod pointwise;

pub use attention::{mhsa_forward, AttentionCache};
pub use conv::{conv2d_forward, conv_transpose2d_forward, Conv2dCfg, ConvTranspose2dCfg};
pub use grad_check::{grad_check, grad_check_fn, grad_check_piecewise, relative_error, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use norm::{group_norm_forward, layer_norm_forward};
pub use pointwise::Activation;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Dense n-dimensional array of `f64` in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(Error::Shape(format!("zero-sized dimension in shape {shape:?}")));
        }
        if numel != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} holds {numel} elements but {} values were supplied", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let numel: usize = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..numel).map(&mut f).collect() }
    }

    /// Independent normal draws with the given standard deviation.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| std * rng.sample::<f64, _>(StandardNormal))
    }

    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| rng.gen_range(lo..hi))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Shape as `[B, C, H, W]`, rejecting any other rank.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape[..] {
            [b, c, h, w] => Ok([b, c, h, w]),
            _ => Err(Error::Shape(format!("expected a rank-4 tensor, got shape {:?}", self.shape))),
        }
    }

    pub fn dims3(&self) -> Result<[usize; 3]> {
        match self.shape[..] {
            [a, b, c] => Ok([a, b, c]),
            _ => Err(Error::Shape(format!("expected a rank-3 tensor, got shape {:?}", self.shape))),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::Shape(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.expect_same_shape(other)?;
        Ok(Self { shape: self.shape.clone(), data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect() })
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.expect_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.expect_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Slice `index` along the leading axis, keeping the remaining dims.
    pub fn select_first(&self, index: usize) -> Result<Self> {
        let lead = self.shape[0];
        if index >= lead {
            return Err(Error::Shape(format!("index {index} out of range for leading dim {lead}")));
        }
        let inner: usize = self.shape[1..].iter().product();
        let shape = if self.shape.len() > 1 { self.shape[1..].to_vec() } else { vec![1] };
        Ok(Self { shape, data: self.data[index * inner..(index + 1) * inner].to_vec() })
    }

    /// Stack equally-shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::Shape("cannot stack an empty list".into()))?;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            first.expect_same_shape(t)?;
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Self { shape, data })
    }

    pub(crate) fn expect_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("shape mismatch: {:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    /// Entries bounded by this cannot overflow in any op on the tape.
    pub(crate) const SAFE_MAGNITUDE: f64 = 1e100;

    pub(crate) fn within_safe_range(&self) -> bool {
        self.data.iter().all(|v| v.abs() <= Self::SAFE_MAGNITUDE)
    }

    pub(crate) fn debug_check_finite(&self, op: &str) {
        debug_assert!(self.all_finite(), "{op} produced a non-finite value");
    }
}
