//! Named parameter storage shared by the model, the optimizers and the
//! checkpoint format.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Which part of the network a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamGroup {
    /// Convolutional feature encoder.
    Encoder,
    /// Mask embedding, positional convolution and transformer layers.
    Context,
    /// Output projection.
    Classifier,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    groups: Vec<ParamGroup>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a new parameter. Names must be unique.
    pub fn add(&mut self, name: &str, group: ParamGroup, value: Tensor) -> ParamId {
        assert!(
            !self.names.iter().any(|n| n == name),
            "parameter {name} registered twice"
        );
        self.names.push(name.to_string());
        self.groups.push(group);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
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

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn group(&self, id: ParamId) -> ParamGroup {
        self.groups[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Replaces every tensor with the same-named tensor from `other`.
    pub fn load_from(&mut self, named: Vec<(String, Tensor)>) -> Result<()> {
        if named.len() != self.len() {
            return Err(Error::format(
                "parameter set",
                format!("expected {} tensors, found {}", self.len(), named.len()),
            ));
        }
        for (name, t) in named {
            let id = self
                .find(&name)
                .ok_or_else(|| Error::format("parameter set", format!("unknown tensor {name}")))?;
            if self.get(id).shape() != t.shape() {
                return Err(Error::dim("load parameter", self.get(id).shape(), t.shape()));
            }
            self.tensors[id.0] = t;
        }
        Ok(())
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }
}

/// One gradient tensor per registered parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    grads: Vec<Option<Tensor>>,
}

impl ParamGrads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store
                .tensors
                .iter()
                .map(|t| Some(Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    /// A gradient set with no entries; [`set`](Self::set) fills it in.
    pub fn empty(len: usize) -> Self {
        Self {
            grads: vec![None; len],
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut Tensor> {
        self.grads.get_mut(id.0).and_then(Option::as_mut)
    }

    pub fn set(&mut self, id: ParamId, g: Tensor) {
        self.grads[id.0] = Some(g);
    }

    /// `self += other` entrywise.
    pub fn accumulate(&mut self, other: &ParamGrads) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::dim("accumulate", &[self.len()], &[other.len()]));
        }
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => a.add_assign(b)?,
                (None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.scale_in_place(factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(Tensor::is_finite)
    }

    /// L2 norm over the parameters of one group.
    pub fn group_norm(&self, store: &ParamStore, group: ParamGroup) -> f64 {
        store
            .ids()
            .filter(|id| store.group(*id) == group)
            .filter_map(|id| self.get(id))
            .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}
