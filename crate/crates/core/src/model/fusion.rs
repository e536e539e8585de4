//! Late fusion of the image and genomic bag features into hazard logits.

use super::{Linear, Phase};
use crate::error::{CoreError, Result};
use crate::graph::{NodeId, Tape};
use crate::param::ParamStore;

/// Risk head: one hidden FC with ReLU over the concatenated bag features,
/// then a linear map to `n_bins` hazard logits.
#[derive(Clone, Debug)]
pub struct FusionParams {
    pub hidden: Linear,
    pub out: Linear,
}

/// Concatenate `[h_feature, g_feature]` and run the FC stack. The returned
/// logits are pre-sigmoid hazards.
pub fn fuse_and_risk(
    tape: &mut Tape,
    store: &ParamStore,
    params: &FusionParams,
    h_feature: NodeId,
    g_feature: NodeId,
    phase: &mut Phase<'_>,
) -> Result<NodeId> {
    if tape.value(h_feature).rows() != 1 || tape.value(g_feature).rows() != 1 {
        return Err(CoreError::Contract("bag features must be single rows".into()));
    }
    let joint = tape.concat_cols(h_feature, g_feature)?;
    let hidden = params.hidden.forward(tape, store, joint)?;
    let hidden = tape.relu(hidden);
    let hidden = phase.dropout(tape, hidden)?;
    params.out.forward(tape, store, hidden)
}
