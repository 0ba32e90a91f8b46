use crate::autodiff::graph::{Gradients, Graph, NodeId};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// Ordered, named set of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        match self.entries.iter_mut().find(|(n, _)| n == name) {
            Some((_, t)) => *t = value,
            None => self.entries.push((name.to_string(), value)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub(crate) fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.is_finite())
    }

    /// Adds every tensor to `g` as a parameter leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        let ids = self.entries.iter().map(|(n, t)| (n.clone(), g.parameter(t.clone()))).collect();
        Bound { ids }
    }

    /// Adds every tensor to `g` as a constant (no gradient).
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound {
        let ids = self.entries.iter().map(|(n, t)| (n.clone(), g.constant(t.clone()))).collect();
        Bound { ids }
    }

    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Self {
        ParamSet { entries }
    }

    pub fn into_entries(self) -> Vec<(String, Tensor)> {
        self.entries
    }
}

/// Graph nodes of a bound [`ParamSet`], in insertion order.
#[derive(Debug, Clone)]
pub struct Bound {
    ids: Vec<(String, NodeId)>,
}

impl Bound {
    pub fn id(&self, name: &str) -> NodeId {
        self.ids
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
            .unwrap_or_else(|| panic!("parameter '{}' is not bound", name))
    }

    /// Gradients for every bound parameter, zeros where none arrived.
    pub fn gradients(&self, grads: &Gradients, params: &ParamSet) -> Result<Vec<Tensor>> {
        if params.len() != self.ids.len() {
            return Err(Error::State("parameter set changed since binding".into()));
        }
        Ok(self.ids.iter().zip(params.tensors()).map(|((_, id), t)| grads.get_or_zeros(*id, t.shape())).collect())
    }
}
