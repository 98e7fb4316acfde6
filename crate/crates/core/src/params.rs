//! Named trainable tensors.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub(crate) fn new(i: usize) -> Self {
        ParamId(i)
    }

    pub fn index(self) -> usize {
        self.0
    }
}

/// Every trainable weight of a model, in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor under a unique name.
    ///
    /// Panics on a duplicate name; parameter layouts are fixed by the model
    /// definition, so a clash is a programming error.
    pub fn register(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        self.by_name.insert(name.clone(), self.tensors.len());
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Total number of scalar weights.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces the value of a parameter, keeping its shape.
    pub fn set(&mut self, id: ParamId, t: Tensor) {
        assert_eq!(self.tensors[id.0].shape(), t.shape(), "shape change for {}", self.names[id.0]);
        self.tensors[id.0] = t;
    }
}

/// Seeded uniform initializer.
pub struct Initializer {
    rng: ChaCha8Rng,
    scale: f64,
}

impl Initializer {
    pub fn new(seed: u64, scale: f64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
            scale,
        }
    }

    pub fn uniform(&mut self, shape: &[usize]) -> Tensor {
        self.uniform_scaled(shape, self.scale)
    }

    pub fn uniform_scaled(&mut self, shape: &[usize], scale: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-scale..=scale)).collect();
        Tensor::new(shape.to_vec(), data).expect("shape/product agree")
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}
