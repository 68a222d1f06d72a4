//! Reverse-mode differentiable computation over small dense f64 tensors.
//!
//! A recorded-tape engine sized for the two fixed networks in this crate:
//! eager forward evaluation onto a [`tape::Tape`], reverse sweep into a
//! [`GradStore`], Adam updates over a named [`ParamSet`]. Everything is f64;
//! non-finite values are treated as errors, not propagated.

pub mod adam;
pub mod conv;
pub mod gradcheck;
pub mod linalg;
pub mod mlp;
pub mod tape;

pub use adam::{opt_step, OptState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use mlp::{eval_mlp, forward_mlp, init_mlp, Activation, MlpArch};
pub use tape::{Tape, Var};

use crate::rng::Rng;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("duplicate parameter name {0:?}")]
    DuplicateParam(String),
    #[error("unknown parameter name {0:?}")]
    UnknownParam(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

/// Dense row-major f64 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, DiffError> {
        let n: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(DiffError::Dimension(format!(
                "zero-sized dimension in shape {shape:?}"
            )));
        }
        if n != data.len() {
            return Err(DiffError::Dimension(format!(
                "shape {shape:?} wants {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn filled(shape: Vec<usize>, v: f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![v; n],
        }
    }

    /// Gaussian init with the given standard deviation.
    pub fn randn(shape: Vec<usize>, std: f64, rng: &mut Rng) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.normal() * std).collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Rows of a 2-D tensor (a 1-D tensor counts as a single row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            2 => self.shape[0],
            _ => panic!("rows() on tensor of rank {}", self.shape.len()),
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => self.shape[0],
            2 => self.shape[1],
            _ => panic!("cols() on tensor of rank {}", self.shape.len()),
        }
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Named parameters of one network with matching gradient slots.
#[derive(Debug, Clone)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
    by_name: BTreeMap<String, usize>,
    grads_populated: bool,
}

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet {
            entries: Vec::new(),
            by_name: BTreeMap::new(),
            grads_populated: false,
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<(), DiffError> {
        if self.by_name.contains_key(name) {
            return Err(DiffError::DuplicateParam(name.to_string()));
        }
        let grad = Tensor::zeros(value.shape().to_vec());
        self.by_name.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            grad,
        });
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Result<usize, DiffError> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| DiffError::UnknownParam(name.to_string()))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor, DiffError> {
        Ok(&self.entries[self.index_of(name)?].value)
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor, DiffError> {
        let i = self.index_of(name)?;
        Ok(&mut self.entries[i].value)
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor, DiffError> {
        Ok(&self.entries[self.index_of(name)?].grad)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.data.iter_mut().for_each(|g| *g = 0.0);
        }
        self.grads_populated = false;
    }

    pub fn grads_populated(&self) -> bool {
        self.grads_populated
    }

    /// Add a backward sweep's gradients into the gradient slots.
    pub fn accumulate(&mut self, store: &GradStore) -> Result<(), DiffError> {
        if store.slots.len() > self.entries.len() {
            return Err(DiffError::State(
                "gradient store does not match parameter set".into(),
            ));
        }
        for (i, slot) in store.slots.iter().enumerate() {
            if let Some(g) = slot {
                let entry = &mut self.entries[i];
                if g.shape() != entry.value.shape() {
                    return Err(DiffError::Dimension(format!(
                        "gradient shape {:?} mismatches parameter {:?} {:?}",
                        g.shape(),
                        entry.name,
                        entry.value.shape()
                    )));
                }
                for (dst, src) in entry.grad.data.iter_mut().zip(&g.data) {
                    *dst += src;
                }
            }
        }
        self.grads_populated = true;
        Ok(())
    }
}

/// Gradients from one backward sweep, indexed like the [`ParamSet`] the tape
/// was bound to. Slots stay `None` for parameters the loss never touched.
#[derive(Debug, Clone, Default)]
pub struct GradStore {
    slots: Vec<Option<Tensor>>,
}

impl GradStore {
    pub fn slot(&self, idx: usize) -> Option<&Tensor> {
        self.slots.get(idx).and_then(|s| s.as_ref())
    }

    pub(crate) fn add_at(&mut self, idx: usize, g: Tensor) {
        if self.slots.len() <= idx {
            self.slots.resize(idx + 1, None);
        }
        match &mut self.slots[idx] {
            Some(existing) => {
                for (dst, src) in existing.data.iter_mut().zip(&g.data) {
                    *dst += src;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    /// Scale every stored gradient in place.
    pub fn scale(&mut self, factor: f64) {
        for slot in self.slots.iter_mut().flatten() {
            slot.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Elementwise sum of two stores (fixed slot order).
    pub fn merge(&mut self, other: GradStore) {
        for (idx, slot) in other.slots.into_iter().enumerate() {
            if let Some(g) = slot {
                self.add_at(idx, g);
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.slots
            .iter()
            .flatten()
            .all(|t| t.all_finite())
    }
}
