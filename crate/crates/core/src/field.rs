use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Real scalar vorticity on the periodic square `[0, 2π)²` sampled on an
/// `n x n` grid. `values[j * n + i]` is the sample at `x = 2πi/n`, `y = 2πj/n`.
#[derive(Clone, Debug, PartialEq)]
pub struct VorticityField {
    n: usize,
    values: Vec<f64>,
    pub time: f64,
}

impl VorticityField {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || values.len() != n * n {
            return Err(Error::Shape(format!("vorticity field of size {n} needs {} values, got {}", n * n, values.len())));
        }
        Ok(Self { n, values, time: 0.0 })
    }

    pub fn zeros(n: usize) -> Self {
        Self { n, values: vec![0.0; n * n], time: 0.0 }
    }

    /// Sample `f(x, y)` on the grid.
    pub fn from_fn(n: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        let h = 2.0 * std::f64::consts::PI / n as f64;
        let values = (0..n * n).map(|idx| f((idx % n) as f64 * h, (idx / n) as f64 * h)).collect();
        Self { n, values, time: 0.0 }
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Unnormalized Euclidean norm of the samples.
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn add(&self, other: &Self) -> Self {
        self.combine(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.combine(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { n: self.n, values: self.values.iter().map(|v| v * c).collect(), time: self.time }
    }

    fn combine(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.n, other.n, "field size mismatch");
        Self { n: self.n, values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(), time: self.time }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `[1, 1, n, n]` tensor for the model.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, 1, self.n, self.n], self.values.clone()).expect("n*n values")
    }

    /// Accepts any tensor holding exactly `n*n` values (`[n,n]`, `[1,1,n,n]`, ...).
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let n = (t.numel() as f64).sqrt().round() as usize;
        Self::new(n, t.data().to_vec())
    }
}
