//! Trainable parameters and their store.

use crate::error::{CoreError, Result};
use crate::matrix::Matrix;
use rand::Rng;

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable matrix with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Parameter {
            name: name.into(),
            value,
            grad,
        }
    }
}

/// Flat registry of all parameters of a model instance.
///
/// Forward passes read values through immutable borrows; `backward` and the
/// optimizer take the store mutably. Creation order is the canonical
/// parameter order for checkpoints and gradient checks.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let id = ParamId(self.params.len());
        self.params.push(Parameter::new(name, value));
        id
    }

    /// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let value = Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound));
        self.add(name, value)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].grad
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, delta: &Matrix) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.grad.shape() != delta.shape() {
            return Err(CoreError::shape("accumulate_grad", p.grad.shape(), delta.shape()));
        }
        p.grad.add_assign(delta)
    }
}
