//! Adam optimizer with bias correction and coupled weight decay.
//!
//! Weight decay is added to the gradient before the moment updates
//! (the classic coupled form); decoupled decay is deliberately not
//! implemented.

use crate::error::{CoreError, Result};
use crate::matrix::Matrix;
use crate::param::{ParamStore, Parameter};

/// Shared optimizer hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// Per-parameter optimizer state plus hyperparameters.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Matrix,
    pub v: Matrix,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize, cfg: &AdamConfig) -> Self {
        AdamState {
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            t: 0,
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
        }
    }
}

/// One Adam update for a single parameter. Consumes the accumulated
/// gradient and zeroes it afterward.
pub fn adam_step(param: &mut Parameter, state: &mut AdamState) -> Result<()> {
    if param.value.shape() != state.m.shape() {
        return Err(CoreError::shape("adam_step", param.value.shape(), state.m.shape()));
    }
    state.t += 1;
    let t = state.t as i32;
    let bias1 = 1.0 - state.beta1.powi(t);
    let bias2 = 1.0 - state.beta2.powi(t);

    let n = param.value.data().len();
    for i in 0..n {
        let theta = param.value.data()[i];
        let g = param.grad.data()[i] + state.weight_decay * theta;
        let m = state.beta1 * state.m.data()[i] + (1.0 - state.beta1) * g;
        let v = state.beta2 * state.v.data()[i] + (1.0 - state.beta2) * g * g;
        state.m.data_mut()[i] = m;
        state.v.data_mut()[i] = v;
        let m_hat = m / bias1;
        let v_hat = v / bias2;
        param.value.data_mut()[i] = theta - state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    param.grad.data_mut().fill(0.0);
    Ok(())
}

/// Optimizer over a whole [`ParamStore`].
pub struct Adam {
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: &AdamConfig) -> Self {
        let states = store
            .iter()
            .map(|p| AdamState::new(p.value.rows(), p.value.cols(), cfg))
            .collect();
        Adam { states }
    }

    /// Step every parameter and zero all gradients.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for (i, state) in self.states.iter_mut().enumerate() {
            let id = crate::param::ParamId(i);
            adam_step(store.get_mut(id), state)?;
        }
        Ok(())
    }
}
