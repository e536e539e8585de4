//! Gated attention pooling and the bag-level head.

use crate::error::{CoreError, Result};
use crate::graph::{NodeId, Tape};
use crate::param::{ParamId, ParamStore};

/// Weights of one gated attention pooling layer.
///
/// `v_rho`/`u_rho` are `d_attn x d_v`, `w_rho` is `1 x d_attn`, and
/// `w_phi` (`d_v x d_v`) is the instance FC applied inside the pooled sum.
#[derive(Clone, Copy, Debug)]
pub struct PoolParams {
    pub v_rho: ParamId,
    pub u_rho: ParamId,
    pub w_rho: ParamId,
    pub w_phi: ParamId,
}

/// Recorded pooling output.
#[derive(Clone, Copy, Debug)]
pub struct PoolForward {
    /// `1 x d_v` bag feature.
    pub bag_feature: NodeId,
    /// `1 x m` attention weights; positive, summing to one.
    pub weights: NodeId,
}

/// Gated attention pooling over `m x d_v` instances:
/// `a = softmax_i(w_rho (tanh(V h_i) * sigm(U h_i)))`, then
/// `bag = sum_i a_i W_phi h_i`.
pub fn gated_attention_pool(
    tape: &mut Tape,
    store: &ParamStore,
    params: &PoolParams,
    instances: NodeId,
) -> Result<PoolForward> {
    if tape.value(instances).rows() == 0 {
        return Err(CoreError::Contract("cannot pool an empty bag".into()));
    }
    let v_rho = tape.param(store, params.v_rho);
    let u_rho = tape.param(store, params.u_rho);
    let w_rho = tape.param(store, params.w_rho);
    let w_phi = tape.param(store, params.w_phi);

    let v_t = tape.transpose(v_rho);
    let u_t = tape.transpose(u_rho);
    let gate_in = tape.matmul(instances, v_t)?;
    let gate = tape.tanh(gate_in);
    let sig_in = tape.matmul(instances, u_t)?;
    let sig = tape.sigmoid(sig_in);
    let gated = tape.mul(gate, sig)?;

    let w_rho_t = tape.transpose(w_rho);
    let scores = tape.matmul(gated, w_rho_t)?;
    let scores_row = tape.transpose(scores);
    let weights = tape.softmax_rows(scores_row)?;

    let w_phi_t = tape.transpose(w_phi);
    let projected = tape.matmul(instances, w_phi_t)?;
    let bag_feature = tape.matmul(weights, projected)?;

    Ok(PoolForward {
        bag_feature,
        weights,
    })
}

/// Bag-level head: a bias-free linear map of the pooled feature.
pub fn bag_head(
    tape: &mut Tape,
    store: &ParamStore,
    w_zeta: ParamId,
    bag_feature: NodeId,
) -> Result<NodeId> {
    let w = tape.param(store, w_zeta);
    let w_t = tape.transpose(w);
    tape.matmul(bag_feature, w_t)
}
