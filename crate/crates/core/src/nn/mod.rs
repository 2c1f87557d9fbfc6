//! Recurrent layers, additive attention, the syntax modulation network and
//! the parameter store they draw from.

mod layers;

use std::ops::Index;

use rand::Rng;
use thiserror::Error;

use crate::tensor::{Tape, Tensor, TensorError, Var};

pub use layers::{
    attention, attention_memory, lstm_step, lstm_step_projected, mlp, modulation_network,
    plain_step, smcg_step, word_distribution, AttentionMemory, AttentionParams, LstmParams,
    MlpInit, MlpPair, MlpParams, ModulationParams, OutputParams, MN_EPS,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("attention memory has no valid rows")]
    EmptyMemory,
}

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors in creation order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Records every parameter on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Bound {
        Bound(
            self.values
                .iter()
                .map(|v| tape.leaf(v.clone(), requires_grad))
                .collect(),
        )
    }
}

/// Tape handles for every parameter of a store, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }

    /// Adds this tape's leaf gradients into `acc` (one buffer per parameter).
    pub fn accumulate(&self, tape: &Tape, acc: &mut [Vec<f64>]) {
        for (v, a) in self.0.iter().zip(acc) {
            if let Some(g) = tape.grad(*v) {
                a.iter_mut().zip(g).for_each(|(x, y)| *x += y);
            }
        }
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

/// Weight initialization: uniform(-scale, scale) matrices, explicit biases.
pub struct Init<'a, R: Rng> {
    pub rng: &'a mut R,
    pub scale: f64,
}

impl<R: Rng> Init<'_, R> {
    pub fn uniform(&mut self, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        let s = self.scale;
        if s == 0.0 {
            return Tensor::zeros(shape);
        }
        let data = (0..n).map(|_| self.rng.gen_range(-s..s)).collect();
        Tensor::new(shape.to_vec(), data).expect("positive shape")
    }
}
