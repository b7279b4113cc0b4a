use std::collections::BTreeMap;

use crate::error::{Result, TensorError};
use crate::graph::{Gradients, Graph, Var};
use crate::tensor::Tensor;

/// One named parameter with its accumulated gradient and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub value: Tensor,
    pub grad: Tensor,
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
    /// Set when a backward pass has deposited a gradient since the last step.
    pub has_grad: bool,
}

impl ParamEntry {
    fn new(value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        Self {
            value,
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
            step: 0,
            has_grad: false,
        }
    }
}

/// Named parameter registry, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(TensorError::DuplicateParameter(name));
        }
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: "parameter" });
        }
        self.entries.insert(name, ParamEntry::new(value));
        Ok(())
    }

    /// Inserts a fully specified entry, as read back from a checkpoint.
    pub fn insert_entry(&mut self, name: impl Into<String>, entry: ParamEntry) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(TensorError::DuplicateParameter(name));
        }
        for t in [&entry.grad, &entry.m, &entry.v] {
            if t.shape() != entry.value.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "insert_entry",
                    left: entry.value.shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
        }
        self.entries.insert(name, entry);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&ParamEntry> {
        self.entries
            .get(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut ParamEntry> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.get(name)?.value)
    }

    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let e = self.get_mut(name)?;
        if e.value.shape() != value.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "set_value",
                left: e.value.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        e.value = value;
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    /// Adds the gradients of every bound parameter into the store.
    pub fn accumulate(&mut self, bound: &BoundParams, grads: &Gradients) -> Result<()> {
        for (name, &var) in &bound.0 {
            let Some(g) = grads.get(var) else { continue };
            let entry = self.get_mut(name)?;
            if g.shape() != entry.value.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "accumulate",
                    left: entry.value.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            for (d, s) in entry.grad.data_mut().iter_mut().zip(g.data()) {
                *d += s;
            }
            entry.has_grad = true;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.data_mut().fill(0.0);
            e.has_grad = false;
        }
    }
}

/// Lazily records parameters of a store as tracked leaves of one graph.
#[derive(Debug)]
pub struct ParamBinder<'s> {
    store: &'s ParameterStore,
    bound: BTreeMap<String, Var>,
}

impl<'s> ParamBinder<'s> {
    pub fn new(store: &'s ParameterStore) -> Self {
        Self {
            store,
            bound: BTreeMap::new(),
        }
    }

    pub fn store(&self) -> &'s ParameterStore {
        self.store
    }

    /// Leaf for parameter `name`, created on first use.
    pub fn param(&mut self, graph: &mut Graph, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let value = self.store.value(name)?.clone();
        let v = graph.leaf(value, true)?;
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn bound(&self) -> impl Iterator<Item = (&str, Var)> {
        self.bound.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn var(&self, name: &str) -> Option<Var> {
        self.bound.get(name).copied()
    }

    /// Releases the store, keeping the name to leaf mapping.
    pub fn finish(self) -> BoundParams {
        BoundParams(self.bound)
    }
}

/// Parameter leaves recorded by a finished [`ParamBinder`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundParams(BTreeMap<String, Var>);

impl BoundParams {
    pub fn var(&self, name: &str) -> Option<Var> {
        self.0.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.0.iter().map(|(k, &v)| (k.as_str(), v))
    }
}
