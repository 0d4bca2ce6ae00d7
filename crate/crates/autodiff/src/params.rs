//! Named parameter storage and per-tape binding.
//!
//! Parameters live outside any tape as plain arrays. Each training step binds
//! them onto a fresh tape as grad-requiring leaves, and after `backward` the
//! gradients are read back through the binding.

use indexmap::IndexMap;
use ndarray::Array2;
use rand::Rng;

use crate::error::{Result, TensorError};
use crate::tape::{Tape, TensorId};

/// Registry of named trainable arrays. Iteration follows registration order,
/// which is deterministic for a fixed model configuration.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: IndexMap<String, Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(TensorError::DuplicateParam(name));
        }
        self.entries.insert(name, value);
        Ok(())
    }

    /// Glorot-uniform initialization with fan-in = rows, fan-out = cols.
    pub fn insert_glorot(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut impl Rng,
    ) -> Result<()> {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let value = Array2::from_shape_simple_fn((rows, cols), || {
            rng.gen_range(-limit..limit)
        });
        self.insert(name, value)
    }

    pub fn insert_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> Result<()> {
        self.insert(name, Array2::zeros((rows, cols)))
    }

    pub fn get(&self, name: &str) -> Result<&Array2<f64>> {
        self.entries
            .get(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Array2<f64>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array2<f64>)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|a| a.len()).sum()
    }

    /// Place every parameter on `tape` as a grad-requiring leaf.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        let mut ids = IndexMap::with_capacity(self.entries.len());
        for (name, value) in &self.entries {
            ids.insert(name.clone(), tape.leaf(value.clone(), true));
        }
        Binding { ids }
    }
}

/// Mapping from parameter names to the leaf ids of one tape.
#[derive(Debug, Clone)]
pub struct Binding {
    ids: IndexMap<String, TensorId>,
}

impl Binding {
    pub fn id(&self, name: &str) -> Result<TensorId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    /// Collect gradients after `tape.backward`. Every bound parameter is
    /// present; parameters the loss never touched carry zeros.
    pub fn grads(&self, tape: &Tape) -> Result<IndexMap<String, Array2<f64>>> {
        let mut out = IndexMap::with_capacity(self.ids.len());
        for (name, &id) in &self.ids {
            let g = tape.grad(id).ok_or(TensorError::GradsMissing)?;
            out.insert(name.clone(), g.clone());
        }
        Ok(out)
    }
}
