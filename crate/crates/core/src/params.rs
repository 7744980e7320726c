//! Named parameter storage and initializers.

use std::collections::HashMap;

use rand::Rng;

use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

/// Parameters keyed by hierarchical dotted names, in creation order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T = f64> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    /// # Panics
    /// On a duplicate name; names are fixed by the architecture code.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.by_name.insert(name.clone(), self.params.len());
        self.params.push(Param {
            name,
            value,
            grad: None,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn value_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        let i = *self.by_name.get(name)?;
        Some(&mut self.params[i].value)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    /// Number of learnable scalars.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Parameter count of every name starting with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.value.numel())
            .sum()
    }

    /// Moves the gradients of a finished backward pass into the store.
    pub fn collect_grads(&mut self, tape: &mut Tape<T>) -> Result<()> {
        if tape.n_params() != self.params.len() {
            return Err(Error::Contract(format!(
                "tape binds {} parameters, store has {}",
                tape.n_params(),
                self.params.len()
            )));
        }
        for (i, p) in self.params.iter_mut().enumerate() {
            p.grad = tape.take_grad(tape.param(ParamId(i)));
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad = None);
    }

    /// Overwrites values from `(name, tensor)` pairs. The name set and every
    /// shape must match exactly.
    pub fn load_values(&mut self, values: Vec<(String, Tensor<T>)>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} parameters, model expects {}",
                values.len(),
                self.params.len()
            )));
        }
        for (name, t) in values {
            let i = *self
                .by_name
                .get(&name)
                .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
            let p = &mut self.params[i];
            if p.value.shape() != t.shape() {
                return Err(Error::Config(format!(
                    "parameter {name} has shape {:?}, checkpoint has {:?}",
                    p.value.shape(),
                    t.shape()
                )));
            }
            p.value = t;
        }
        Ok(())
    }
}

/// Kaiming-uniform over fan-in with bound `1/sqrt(fan_in)`.
pub fn kaiming_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::rand_uniform(shape, -bound, bound, rng)
}
