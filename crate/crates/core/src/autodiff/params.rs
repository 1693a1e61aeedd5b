use std::collections::HashMap;

use crate::array::Array;
use crate::error::{Error, Result};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable arrays, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name `{name}`")));
        }
        let id = self.values.len();
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(id))
    }

    /// Store holding `(name, value)` pairs in order.
    pub fn from_named(params: Vec<(String, Array)>) -> Result<Self> {
        let mut store = Self::new();
        for (name, value) in params {
            store.add(name, value)?;
        }
        Ok(store)
    }

    pub fn get(&self, id: ParamId) -> &Array {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Array)> + '_ {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Total number of scalar entries across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Array::len).sum()
    }

    /// Copies of the parameter values, for checkpoint snapshots.
    pub fn snapshot(&self) -> Vec<Array> {
        self.values.clone()
    }

    pub fn restore(&mut self, snapshot: Vec<Array>) -> Result<()> {
        if snapshot.len() != self.values.len() {
            return Err(Error::invalid("snapshot parameter count differs"));
        }
        for (cur, new) in self.values.iter().zip(&snapshot) {
            if cur.shape() != new.shape() {
                return Err(Error::shape("restore", cur.shape(), new.shape()));
            }
        }
        self.values = snapshot;
        Ok(())
    }
}

/// Gradients produced by a backward pass, one per parameter present in the graph.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: HashMap<ParamId, Array>,
}

impl Gradients {
    pub(crate) fn insert(&mut self, id: ParamId, g: Array) {
        self.grads.insert(id, g);
    }

    /// Gradient for `id`, `None` if the parameter never entered the graph.
    pub fn get(&self, id: ParamId) -> Option<&Array> {
        self.grads.get(&id)
    }

    /// Gradient for `id`, or zeros shaped like the parameter.
    pub fn get_or_zeros(&self, store: &ParamStore, id: ParamId) -> Array {
        self.grads
            .get(&id)
            .cloned()
            .unwrap_or_else(|| Array::zeros(store.get(id).shape()))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}
