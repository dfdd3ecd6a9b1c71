use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::autodiff::graph::{Graph, StatUpdate};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

static NEXT_STORE: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StoreId(u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Named tensor held by a [`ParamStore`]. Non-trainable entries are buffers
/// such as batch-norm running statistics.
#[derive(Clone, Debug)]
pub struct Parameter<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
    pub trainable: bool,
}

/// Ordered collection of the named parameters and buffers of one network.
#[derive(Debug)]
pub struct ParamStore<S> {
    id: StoreId,
    entries: Vec<Parameter<S>>,
    index: HashMap<String, ParamId>,
    frozen: bool,
}

impl<S: Scalar> Clone for ParamStore<S> {
    fn clone(&self) -> Self {
        ParamStore {
            id: StoreId(NEXT_STORE.fetch_add(1, Ordering::Relaxed)),
            entries: self.entries.clone(),
            index: self.index.clone(),
            frozen: self.frozen,
        }
    }
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            id: StoreId(NEXT_STORE.fetch_add(1, Ordering::Relaxed)),
            entries: Vec::new(),
            index: HashMap::new(),
            frozen: false,
        }
    }

    pub fn id(&self) -> StoreId {
        self.id
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        self.insert(name.into(), value, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        self.insert(name.into(), value, false)
    }

    fn insert(&mut self, name: String, value: Tensor<S>, trainable: bool) -> ParamId {
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        let id = ParamId(self.entries.len());
        let grad = Tensor::zeros(value.shape().to_vec());
        self.index.insert(name.clone(), id);
        self.entries.push(Parameter {
            name,
            value,
            grad,
            trainable,
        });
        id
    }

    pub fn entry(&self, id: ParamId) -> &Parameter<S> {
        &self.entries[id.0]
    }

    pub fn entry_mut(&mut self, id: ParamId) -> &mut Parameter<S> {
        &mut self.entries[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<S>)> {
        self.entries.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            p.grad.data_mut().iter_mut().for_each(|g| *g = S::zero());
        }
    }

    /// Add the leaf gradients a graph computed for this store's parameters.
    pub fn accumulate_grads(&mut self, graph: &Graph<S>) {
        for (id, g) in graph.bound_grads(self.id) {
            let p = &mut self.entries[id.0];
            p.grad.data_mut().iter_mut().zip(g).for_each(|(a, &b)| *a += b);
        }
    }

    /// Fold training-mode batch statistics into running estimates.
    pub fn apply_stat_updates(&mut self, updates: &[StatUpdate<S>], momentum: S) {
        for u in updates.iter().filter(|u| u.store == self.id) {
            for (id, batch) in [(u.mean, &u.batch_mean), (u.var, &u.batch_var)] {
                let p = &mut self.entries[id.0];
                p.value
                    .data_mut()
                    .iter_mut()
                    .zip(batch)
                    .for_each(|(r, &b)| *r = (S::one() - momentum) * *r + momentum * b);
            }
        }
    }

    /// Overwrite values from another store by name; shapes must agree.
    pub fn load_from(&mut self, other: &ParamStore<S>) -> Result<()> {
        for p in &mut self.entries {
            let id = other
                .lookup(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing entry {}", p.name)))?;
            let src = other.entry(id);
            if src.value.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "entry {} has shape {:?}, expected {:?}",
                    p.name,
                    src.value.shape(),
                    p.value.shape()
                )));
            }
            p.value = src.value.clone();
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for p in &self.entries {
            out.insert(p.name.clone(), p.value.cast(), p.trainable);
        }
        out.frozen = self.frozen;
        out
    }
}
