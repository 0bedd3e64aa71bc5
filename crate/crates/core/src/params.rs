//! Named, ordered parameter storage.
//!
//! A [`ParamSet`] owns every learnable tensor of a model in a fixed
//! order. The order defines the checkpoint blob layout and the iteration
//! order of the optimizer, so runs replay bit-identically.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, TensorId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How the optimizer treats a parameter after each step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Dense,
    /// Projected onto [0, 1] after every optimizer step (the fusion
    /// scalars).
    UnitInterval,
}

#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub kind: ParamKind,
}

#[derive(Clone, Debug, Default)]
pub struct ParamSet<T> {
    entries: Vec<ParamEntry<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>, kind: ParamKind) {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.by_name.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry { name, value, kind });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count over all parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry<T>> {
        self.entries.iter()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.by_name.get(name).map(|&i| &self.entries[i].value)
    }

    pub fn entry(&self, index: usize) -> &ParamEntry<T> {
        &self.entries[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    /// Replaces a parameter's value; the shape must match.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let idx = *self
            .by_name
            .get(name)
            .ok_or_else(|| Error::arg(format!("unknown parameter {name}")))?;
        if self.entries[idx].value.shape() != value.shape() {
            return Err(Error::shape(format!(
                "parameter {name}: shape {:?} cannot replace {:?}",
                value.shape(),
                self.entries[idx].value.shape()
            )));
        }
        self.entries[idx].value = value;
        Ok(())
    }

    pub fn set_by_index(&mut self, index: usize, value: Tensor<T>) {
        debug_assert_eq!(self.entries[index].value.shape(), value.shape());
        self.entries[index].value = value;
    }

    /// Registers every parameter as a tape leaf, in order.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> BoundParams {
        BoundParams {
            ids: self
                .entries
                .iter()
                .map(|e| tape.leaf(e.value.clone(), requires_grad))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.value.all_finite())
    }
}

/// Tape ids of a bound [`ParamSet`], parallel to its entries.
pub struct BoundParams {
    ids: Vec<TensorId>,
}

impl BoundParams {
    /// Wraps externally created leaf ids (e.g. the gradient-check
    /// harness's own inputs), parallel to the set's entries.
    pub fn from_ids(ids: Vec<TensorId>) -> Self {
        Self { ids }
    }

    pub fn id(&self, index: usize) -> TensorId {
        self.ids[index]
    }

    pub fn ids(&self) -> &[TensorId] {
        &self.ids
    }

    pub fn id_of<T: Scalar>(&self, set: &ParamSet<T>, name: &str) -> TensorId {
        self.ids[set.index_of(name).unwrap_or_else(|| panic!("unknown parameter {name}"))]
    }
}

/// Per-parameter gradients, keyed by name, in [`ParamSet`] order.
/// Parameters unreachable from the loss hold zero tensors.
#[derive(Clone, Debug)]
pub struct GradMap<T> {
    entries: Vec<(String, Tensor<T>)>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> GradMap<T> {
    /// Extracts gradients for every parameter of `set` from a reverse
    /// sweep's result.
    pub fn collect(set: &ParamSet<T>, bound: &BoundParams, grads: &Gradients<T>) -> Self {
        let mut entries = Vec::with_capacity(set.len());
        let mut by_name = HashMap::with_capacity(set.len());
        for (i, e) in set.iter().enumerate() {
            let g = grads.wrt_or_zeros(bound.id(i), e.value.shape());
            by_name.insert(e.name.clone(), i);
            entries.push((e.name.clone(), g));
        }
        Self { entries, by_name }
    }

    /// Zero gradients shaped like `set`.
    pub fn zeros_like(set: &ParamSet<T>) -> Self {
        let mut entries = Vec::with_capacity(set.len());
        let mut by_name = HashMap::with_capacity(set.len());
        for (i, e) in set.iter().enumerate() {
            by_name.insert(e.name.clone(), i);
            entries.push((e.name.clone(), Tensor::zeros(e.value.shape())));
        }
        Self { entries, by_name }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.by_name.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn by_index(&self, index: usize) -> &Tensor<T> {
        &self.entries[index].1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Accumulates `other` into `self`, entry by entry.
    pub fn add_assign(&mut self, other: &GradMap<T>) {
        assert_eq!(self.entries.len(), other.entries.len());
        for ((_, a), (_, b)) in self.entries.iter_mut().zip(other.entries.iter()) {
            let sum: Vec<T> = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
            *a = Tensor::from_vec(a.shape(), sum).unwrap();
        }
    }

    /// Multiplies every gradient by a constant.
    pub fn scale(&mut self, factor: T) {
        for (_, g) in self.entries.iter_mut() {
            *g = g.map(|v| v * factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, g)| g.all_finite())
    }
}
