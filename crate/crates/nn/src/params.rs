use std::sync::Arc;

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    tensor: Arc<Tensor>,
    trainable: bool,
}

/// Named parameter tensors. Trainable entries receive gradients; the rest
/// are buffers such as batch-norm running statistics.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, name: String, tensor: Tensor, trainable: bool) -> ParamId {
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        self.entries.push(Entry {
            name,
            tensor: Arc::new(tensor),
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.push(name.into(), tensor, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.push(name.into(), tensor, false)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|id| self.entries[id.0].trainable)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub(crate) fn shared(&self, id: ParamId) -> Arc<Tensor> {
        Arc::clone(&self.entries[id.0].tensor)
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.entries[id.0].tensor)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Replaces a tensor, keeping its shape.
    pub fn set(&mut self, id: ParamId, tensor: Tensor) -> Result<()> {
        if tensor.shape() != self.get(id).shape() {
            return Err(NnError::Shape {
                op: "set",
                detail: format!(
                    "{}: {:?} vs {:?}",
                    self.name(id),
                    tensor.shape(),
                    self.get(id).shape()
                ),
            });
        }
        self.entries[id.0].tensor = Arc::new(tensor);
        Ok(())
    }

    pub fn num_trainable_values(&self) -> usize {
        self.trainable_ids().map(|id| self.get(id).len()).sum()
    }

    /// True when every trainable tensor equals `other`'s bit for bit.
    pub fn trainable_bitwise_eq(&self, other: &ParamStore) -> bool {
        self.len() == other.len()
            && self.trainable_ids().all(|id| {
                let (a, b) = (self.get(id).data(), other.get(id).data());
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Gradients from one backward pass: one entry per trainable parameter
/// (zeros when the parameter did not influence the loss) and the gradient
/// of every graph node that was reached.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub(crate) params: Vec<Option<Tensor>>,
    pub(crate) nodes: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a trainable parameter; `None` for buffers.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to a node, if the loss depends on it.
    pub fn wrt(&self, var: crate::graph::Var) -> Option<&Tensor> {
        self.nodes.get(var.0).and_then(|g| g.as_ref())
    }

    /// Sum of squared entries over all parameter gradients.
    pub fn squared_norm(&self) -> f64 {
        self.params
            .iter()
            .flatten()
            .flat_map(|t| t.data())
            .map(|&v| f64::from(v) * f64::from(v))
            .sum()
    }

    /// Adds another set of parameter gradients into this one.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (mine, theirs) in self.params.iter_mut().zip(&other.params) {
            if let (Some(a), Some(b)) = (mine.as_mut(), theirs.as_ref()) {
                crate::kernels::add_assign(a.data_mut(), b.data());
            }
        }
    }
}
