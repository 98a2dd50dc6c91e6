use indexmap::IndexMap;

use crate::error::{Error, Result};

use super::init::{seeded_init, stream_id, InitScheme};
use super::tape::{Tape, Var};
use super::tensor::{Real, Tensor};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameters in registration order. Names are unique.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    entries: IndexMap<String, Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }

    /// Registers a parameter. Panics on a duplicate name, which is a model
    /// construction bug rather than a runtime condition.
    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        let (idx, prev) = self.entries.insert_full(name.to_string(), value);
        assert!(prev.is_none(), "duplicate parameter name {name}");
        ParamId(idx)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name)
    }

    /// Ids in registration order.
    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.entries.get_index(id.0).map(|(k, _)| k.as_str()).unwrap()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        self.entries.values().collect()
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.entries.values_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    pub fn zeros_like(&self) -> Vec<Tensor<T>> {
        self.entries.values().map(|t| Tensor::zeros(t.shape())).collect()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self.entries.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Replaces every value with the same-named tensor from `other`. Names
    /// and shapes must match exactly.
    pub fn assign_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Compatibility(format!(
                "expected {} parameters, found {}",
                self.len(),
                other.len()
            )));
        }
        for (name, value) in other.iter() {
            let Some(slot) = self.entries.get(name) else {
                return Err(Error::Compatibility(format!("unexpected parameter {name}")));
            };
            if slot.shape() != value.shape() {
                return Err(Error::Compatibility(format!(
                    "parameter {name}: model shape {:?}, checkpoint shape {:?}",
                    slot.shape(),
                    value.shape()
                )));
            }
        }
        for (name, value) in other.iter() {
            *self.entries.get_mut(name).unwrap() = value.clone();
        }
        Ok(())
    }
}

/// Registers freshly initialized parameters under a name prefix.
pub struct ParamBuilder<'a, T> {
    store: &'a mut ParamStore<T>,
    seed: u64,
    prefix: String,
}

impl<'a, T: Real> ParamBuilder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, seed: u64) -> Self {
        Self {
            store,
            seed,
            prefix: String::new(),
        }
    }

    pub fn scoped(&mut self, scope: &str) -> ParamBuilder<'_, T> {
        let prefix = if self.prefix.is_empty() {
            scope.to_string()
        } else {
            format!("{}.{scope}", self.prefix)
        };
        ParamBuilder {
            store: self.store,
            seed: self.seed,
            prefix,
        }
    }

    pub fn add(&mut self, name: &str, shape: &[usize], scheme: InitScheme) -> ParamId {
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        let value = seeded_init(shape, scheme, self.seed, stream_id(&full));
        self.store.insert(&full, value)
    }
}

/// A tape plus lazily bound parameter leaves.
///
/// Parameters enter the tape on first use, so anything the forward pass
/// never touches keeps a zero gradient.
pub struct Session<'p, T> {
    pub tape: Tape<T>,
    store: &'p ParamStore<T>,
    bound: Vec<Option<Var>>,
}

impl<'p, T: Real> Session<'p, T> {
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Self {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'p ParamStore<T> {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.param(self.store.get(id).clone());
        self.bound[id.0] = Some(v);
        v
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.tape.constant(value)
    }

    /// Gradients aligned with the store; zeros for unused parameters.
    pub fn param_grads(&self) -> Vec<Tensor<T>> {
        self.bound
            .iter()
            .zip(self.store.tensors())
            .map(|(b, t)| match b {
                Some(v) => self.tape.grad_or_zeros(*v),
                None => Tensor::zeros(t.shape()),
            })
            .collect()
    }
}
