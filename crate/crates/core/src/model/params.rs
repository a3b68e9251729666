use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Ordered named parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

/// Parameters placed on a graph, in store order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: usize) -> Var {
        self.vars[id]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(value);
        id
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.id(name).map(move |i| &mut self.tensors[i])
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        Bound { vars: self.tensors.iter().map(|t| g.leaf(t.clone(), trainable)).collect() }
    }

    pub fn to_named(&self) -> Vec<(String, Tensor)> {
        self.names.iter().cloned().zip(self.tensors.iter().cloned()).collect()
    }

    /// Replace values from named entries that must match this store's names
    /// and shapes one-to-one.
    pub fn load_named(&mut self, entries: Vec<(String, Tensor)>) -> Result<()> {
        if entries.len() != self.tensors.len() {
            return Err(Error::Config(format!("checkpoint holds {} tensors, model expects {}", entries.len(), self.tensors.len())));
        }
        for (name, t) in entries {
            let id = self.id(&name).ok_or_else(|| Error::Config(format!("checkpoint tensor `{name}` is not a model parameter")))?;
            if t.shape() != self.tensors[id].shape() {
                return Err(Error::Config(format!(
                    "checkpoint tensor `{name}` has shape {:?}, model expects {:?}",
                    t.shape(),
                    self.tensors[id].shape()
                )));
            }
            self.tensors[id] = t;
        }
        Ok(())
    }
}

/// Registers parameters with random initial values.
pub(crate) struct Init<'a, R: Rng> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut R,
}

impl<R: Rng> Init<'_, R> {
    pub fn normal(&mut self, name: String, shape: &[usize], std: f64) -> usize {
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape, |_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng));
        self.store.add(name, t)
    }

    pub fn constant(&mut self, name: String, shape: &[usize], value: f64) -> usize {
        self.store.add(name, Tensor::full(shape, value))
    }
}
