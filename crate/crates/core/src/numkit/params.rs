use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named gradient buffers, one per parameter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Grads {
    tensors: BTreeMap<String, Tensor>,
}

impl Grads {
    pub fn zeros_like(params: &ParamStore) -> Self {
        Self {
            tensors: params
                .iter()
                .map(|(n, t)| (n.to_string(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    /// Panics on an unknown name; names come from the model layout.
    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("no gradient buffer named {name}"))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (name, g) in &other.tensors {
            self.get_mut(name).add_assign(g);
        }
    }

    pub fn add_scaled(&mut self, alpha: f64, other: &Grads) {
        for (name, g) in &other.tensors {
            self.get_mut(name).axpy(alpha, g);
        }
    }
}

/// Named parameters with parallel gradient storage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    grads: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Consistency(format!("duplicate parameter {name}")));
        }
        self.grads.insert(name.clone(), Tensor::zeros(value.shape()));
        self.params.insert(name, value);
        Ok(())
    }

    /// Panics on an unknown name; names come from the model layout.
    pub fn get(&self, name: &str) -> &Tensor {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("no parameter named {name}"))
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn zero_grads(&mut self) {
        self.grads.values_mut().for_each(|g| g.fill(0.0));
    }

    /// Replace every gradient; each buffer must match its parameter's shape.
    pub fn set_grads(&mut self, grads: Grads) -> Result<()> {
        for name in self.params.keys() {
            if grads.get(name).is_none() {
                return Err(Error::Consistency(format!("missing gradient for {name}")));
            }
        }
        for (name, g) in grads.tensors {
            let p = self
                .params
                .get(&name)
                .ok_or_else(|| Error::Consistency(format!("gradient for unknown parameter {name}")))?;
            if p.shape() != g.shape() {
                return Err(Error::Consistency(format!(
                    "gradient {name} has shape {:?}, parameter has {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            self.grads.insert(name, g);
        }
        Ok(())
    }

    pub(crate) fn params_and_grads_mut(
        &mut self,
    ) -> impl Iterator<Item = (&str, &mut Tensor, Option<&Tensor>)> {
        let grads = &self.grads;
        self.params
            .iter_mut()
            .map(move |(n, p)| (n.as_str(), p, grads.get(n)))
    }

    #[cfg(test)]
    pub(crate) fn remove_grad(&mut self, name: &str) {
        self.grads.remove(name);
    }
}
