//! Named parameter storage with deterministic iteration order.

use super::{Tensor, TensorError};
use crate::rng::Rng;
use std::collections::BTreeMap;

/// Parameter tensors keyed by name. BTreeMap keeps every walk over the
/// parameters (updates, serialization, gradient application) in one fixed
/// order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    map: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { map: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        self.map.insert(name.to_string(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.map.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.map.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    /// Insert a tensor with values uniform in [-lim, lim] where
    /// lim = 1/sqrt(fan_in).
    pub fn insert_uniform(&mut self, name: &str, shape: Vec<usize>, fan_in: usize, rng: &mut Rng) {
        let lim = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.range(-lim, lim)).collect();
        self.insert(name, Tensor::new(shape, data).expect("shape/data computed together"));
    }

    pub fn insert_zeros(&mut self, name: &str, shape: Vec<usize>) {
        self.insert(name, Tensor::zeros(shape));
    }

    pub fn insert_filled(&mut self, name: &str, shape: Vec<usize>, v: f64) {
        self.insert(name, Tensor::filled(shape, v));
    }

    /// Add every parameter to a graph as a trainable leaf, returning the
    /// name → node mapping.
    pub fn register_all(&self, g: &mut super::Graph) -> BTreeMap<String, super::NodeId> {
        let mut ids = BTreeMap::new();
        for (name, t) in &self.map {
            ids.insert(name.clone(), g.param(name, t.clone()));
        }
        ids
    }

    /// Overwrite parameter values from same-shaped tensors.
    pub fn set(&mut self, name: &str, t: Tensor) -> Result<(), TensorError> {
        match self.map.get(name) {
            Some(old) if old.shape() != t.shape() => Err(TensorError::ShapeMismatch {
                op: "param set",
                lhs: old.shape().to_vec(),
                rhs: t.shape().to_vec(),
            }),
            _ => {
                self.map.insert(name.to_string(), t);
                Ok(())
            }
        }
    }
}
