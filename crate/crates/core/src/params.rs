use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Named parameter tensors plus their SGD velocity buffers.
///
/// Names are ordered, so iteration (and therefore serialization and
/// optimizer updates) is deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
    velocity: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::DuplicateName(name));
        }
        self.tensors.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    /// Removes a parameter and its velocity.
    pub fn remove(&mut self, name: &str) -> Result<Tensor> {
        self.velocity.remove(name);
        self.tensors
            .remove(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Total scalar parameter count (velocities excluded).
    pub fn param_count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn velocity(&self, name: &str) -> Option<&Tensor> {
        self.velocity.get(name)
    }

    pub fn velocities(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.velocity.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn set_velocity(&mut self, name: &str, v: Tensor) -> Result<()> {
        let p = self.get(name)?;
        if p.dims() != v.dims() {
            return Err(Error::ShapeMismatch {
                name: name.to_string(),
                expected: p.dims().to_vec(),
                actual: v.dims().to_vec(),
            });
        }
        self.velocity.insert(name.to_string(), v);
        Ok(())
    }

    pub fn clear_velocity(&mut self) {
        self.velocity.clear();
    }

    pub(crate) fn velocity_mut_or_zero(&mut self, name: &str, dims: &[usize]) -> &mut Tensor {
        self.velocity
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(dims))
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.tensors.values_mut().for_each(|t| t.set_requires_grad(flag));
    }

    pub fn zero_grads(&mut self) {
        self.tensors.values_mut().for_each(Tensor::zero_grad);
    }

    /// Places a copy of parameter `name` on the graph as a leaf.
    pub fn bind(&self, graph: &mut Graph, name: &str, bindings: &mut Bindings) -> Result<Var> {
        let t = self.get(name)?;
        let mut copy = t.clone();
        copy.zero_grad();
        let v = graph.leaf(copy);
        if t.requires_grad() {
            bindings.0.push((name.to_string(), v));
        }
        Ok(v)
    }

    /// Pulls leaf gradients from the graph into the parameter tensors.
    pub fn absorb_grads(&mut self, graph: &Graph, bindings: &Bindings) -> Result<()> {
        for (name, var) in &bindings.0 {
            if let Some(g) = graph.grad(*var) {
                self.get_mut(name)?.accumulate_grad(g);
            }
        }
        Ok(())
    }

    /// SHA-256 over names, dims and little-endian parameter bytes.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.tensors {
            h.update(name.as_bytes());
            for d in t.dims() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Parameter-name ↔ graph-leaf associations from one forward pass.
#[derive(Debug, Default)]
pub struct Bindings(pub(crate) Vec<(String, Var)>);

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.0.iter().map(|(n, v)| (n.as_str(), *v))
    }
}
