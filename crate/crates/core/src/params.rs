//! Flat, named parameter storage.
//!
//! Model layouts hold indices into a [`ParamSet`]. Binding the set to a tape
//! turns every array into a leaf, in order, so the same index addresses the
//! stored array, its tape variable and its gradient.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, Gradients, Tape, Var};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Array>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Array) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    /// `rows x cols` drawn from `U(-bound, bound)`.
    pub fn push_uniform(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        bound: f64,
        rng: &mut dyn RngCore,
    ) -> usize {
        let value = Array::from_fn(rows, cols, |_, _| {
            if bound > 0.0 {
                rng.random_range(-bound..bound)
            } else {
                0.0
            }
        });
        self.push(name, value)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Array] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array] {
        &mut self.values
    }

    pub fn get(&self, i: usize) -> &Array {
        &self.values[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Array {
        &mut self.values[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Array::len).sum()
    }

    /// Puts every parameter on `tape` as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.values.iter().map(|v| tape.leaf(v.clone())).collect()
    }

    /// Puts every parameter on `tape` as a constant.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Vec<Var> {
        self.values
            .iter()
            .map(|v| tape.constant(v.clone()))
            .collect()
    }

    /// Gradients of the bound leaves, zeros where no path reached them.
    pub fn gradients(&self, vars: &[Var], grads: &Gradients) -> Vec<Array> {
        vars.iter()
            .zip(&self.values)
            .map(|(&v, a)| grads.get_or_zeros(v, a))
            .collect()
    }
}
