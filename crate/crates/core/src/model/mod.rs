//! The hierarchical multimodal survival model.
//!
//! One forward pass (all recorded on a single tape): project raw patch
//! features to the working width, embed grouped gene sets with per-category
//! FC layers, compress the image bag to gene-guided visual concepts via
//! co-attention, run both modalities through set-transformer encoders with
//! gated attention pooling and bag heads, and fuse the two bag features
//! into discrete hazard logits.

mod attention;
mod checkpoint;
mod fusion;
mod pooling;

pub use attention::{
    encoder_forward, gca_forward, scaled_attention, self_attention_set, AttentionForward,
    AttentionParams, EncoderLayerParams, EncoderParams, GcaForward, GcaParams,
};
pub use checkpoint::{apply_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};
pub use fusion::{fuse_and_risk, FusionParams};
pub use pooling::{bag_head, gated_attention_pool, PoolForward, PoolParams};

use crate::data::MultimodalBag;
use crate::error::{CoreError, Result};
use crate::graph::{NodeId, Tape};
use crate::matrix::Matrix;
use crate::param::{ParamId, ParamStore};
use rand::{Rng, RngCore};

/// Architecture hyperparameters. The attention working width `d_k` doubles
/// as the bag-feature width; `d_attn` is the hidden width of the pooling
/// gate.
#[derive(Clone, Debug)]
pub struct HimtConfig {
    pub d_k: usize,
    pub d_attn: usize,
    pub n_heads: usize,
    pub l_enc: usize,
    pub n_bins: usize,
    pub dropout: f64,
}

impl Default for HimtConfig {
    fn default() -> Self {
        HimtConfig {
            d_k: 256,
            d_attn: 64,
            n_heads: 1,
            l_enc: 1,
            n_bins: 4,
            dropout: 0.25,
        }
    }
}

/// Affine layer computing `x W^T + b` with `W: out x in`, `b: 1 x out`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), out_dim, in_dim, in_dim, rng);
        let bias = store.add(format!("{name}.bias"), Matrix::zeros(1, out_dim));
        Linear { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let w_t = tape.transpose(w);
        let projected = tape.matmul(x, w_t)?;
        tape.add_row(projected, b)
    }
}

/// Per-category gene FC. Categories that were empty at model creation get
/// a bias-only embedding so arbitrary signatures still load.
#[derive(Clone, Copy, Debug)]
pub struct GeneFc {
    pub weight: Option<ParamId>,
    pub bias: ParamId,
}

/// Training/eval mode switch carrying the dropout stream.
pub struct Phase<'a> {
    dropout: Option<(f64, &'a mut dyn RngCore)>,
}

impl<'a> Phase<'a> {
    /// Inference: dropout layers are identity.
    pub fn eval() -> Phase<'static> {
        Phase { dropout: None }
    }

    /// Training with inverted dropout at `rate` on FC activations.
    pub fn train(rate: f64, rng: &'a mut dyn RngCore) -> Phase<'a> {
        if rate == 0.0 {
            Phase { dropout: None }
        } else {
            Phase {
                dropout: Some((rate, rng)),
            }
        }
    }

    /// Apply dropout to a node if in training mode.
    pub fn dropout(&mut self, tape: &mut Tape, node: NodeId) -> Result<NodeId> {
        let Some((rate, rng)) = self.dropout.as_mut() else {
            return Ok(node);
        };
        let keep = 1.0 - *rate;
        let shape = tape.value(node).shape();
        let mask = Matrix::from_fn(shape.0, shape.1, |_, _| {
            if rng.random_bool(keep) {
                1.0 / keep
            } else {
                0.0
            }
        });
        let mask = tape.constant(mask);
        tape.mul(node, mask)
    }
}

/// Embed grouped raw gene sets into an `N x d_k` genomic bag. Each set has
/// its own FC; empty sets contribute their bias row.
pub fn embed_gene_sets(
    tape: &mut Tape,
    store: &ParamStore,
    gene_fcs: &[GeneFc],
    gene_sets: &[Vec<f64>],
) -> Result<NodeId> {
    if gene_fcs.len() != gene_sets.len() {
        return Err(CoreError::Contract(format!(
            "model has {} gene FCs but the bag has {} gene sets",
            gene_fcs.len(),
            gene_sets.len()
        )));
    }
    let mut rows: Vec<NodeId> = Vec::with_capacity(gene_sets.len());
    for (fc, set) in gene_fcs.iter().zip(gene_sets) {
        let bias = tape.param(store, fc.bias);
        let row = if set.is_empty() {
            bias
        } else {
            let Some(weight) = fc.weight else {
                return Err(CoreError::Contract(format!(
                    "gene set of length {} fed to a bias-only category",
                    set.len()
                )));
            };
            let values = tape.constant(Matrix::from_vec(1, set.len(), set.clone())?);
            let w = tape.param(store, weight);
            let w_t = tape.transpose(w);
            let projected = tape.matmul(values, w_t)?;
            tape.add_row(projected, bias)?
        };
        rows.push(row);
    }
    let mut bag = rows[0];
    for &row in &rows[1..] {
        bag = tape.concat_rows(bag, row)?;
    }
    Ok(bag)
}

/// Handles to every trainable piece of the model, living in a
/// [`ParamStore`].
#[derive(Clone, Debug)]
pub struct HimtModel {
    pub config: HimtConfig,
    pub input_proj: Linear,
    pub gene_fcs: Vec<GeneFc>,
    pub gca: GcaParams,
    pub enc_h: EncoderParams,
    pub enc_g: EncoderParams,
    pub pool_h: PoolParams,
    pub pool_g: PoolParams,
    pub head_h: ParamId,
    pub head_g: ParamId,
    pub fusion: FusionParams,
}

/// Everything a forward pass records that callers may want to inspect.
#[derive(Clone, Debug)]
pub struct HimtForward {
    /// Projected image bag, `M x d_k`.
    pub h_bag: NodeId,
    /// Genomic bag, `N x d_k`.
    pub g_bag: NodeId,
    pub gca: GcaForward,
    pub pool_h: PoolForward,
    pub pool_g: PoolForward,
    /// Hazard logits, `1 x n_bins`.
    pub logits: NodeId,
}

fn init_attention(
    store: &mut ParamStore,
    name: &str,
    d_k: usize,
    rng: &mut impl Rng,
) -> AttentionParams {
    AttentionParams {
        w_q: store.add_uniform(format!("{name}.w_q"), d_k, d_k, d_k, rng),
        w_k: store.add_uniform(format!("{name}.w_k"), d_k, d_k, d_k, rng),
        w_v: store.add_uniform(format!("{name}.w_v"), d_k, d_k, d_k, rng),
    }
}

fn init_encoder(
    store: &mut ParamStore,
    name: &str,
    d_k: usize,
    l_enc: usize,
    rng: &mut impl Rng,
) -> EncoderParams {
    EncoderParams {
        layers: (0..l_enc)
            .map(|l| EncoderLayerParams {
                phi: Linear::init(store, &format!("{name}.{l}.phi"), d_k, d_k, rng),
                attention: init_attention(store, &format!("{name}.{l}"), d_k, rng),
            })
            .collect(),
    }
}

fn init_pool(store: &mut ParamStore, name: &str, d_v: usize, d_attn: usize, rng: &mut impl Rng) -> PoolParams {
    PoolParams {
        v_rho: store.add_uniform(format!("{name}.v_rho"), d_attn, d_v, d_v, rng),
        u_rho: store.add_uniform(format!("{name}.u_rho"), d_attn, d_v, d_v, rng),
        w_rho: store.add_uniform(format!("{name}.w_rho"), 1, d_attn, d_attn, rng),
        w_phi: store.add_uniform(format!("{name}.w_phi"), d_v, d_v, d_v, rng),
    }
}

impl HimtModel {
    /// Create all parameters. `gene_set_sizes` fixes the per-category FC
    /// input widths (zero means bias-only); `d_in` is the on-disk feature
    /// width bridged by the learned input projection.
    pub fn init(
        config: &HimtConfig,
        d_in: usize,
        gene_set_sizes: &[usize],
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if config.n_heads == 0 || !config.d_k.is_multiple_of(config.n_heads) {
            return Err(CoreError::Contract(format!(
                "n_heads {} must divide d_k {}",
                config.n_heads, config.d_k
            )));
        }
        if config.l_enc == 0 {
            return Err(CoreError::Contract("l_enc must be at least 1".into()));
        }
        if gene_set_sizes.is_empty() {
            return Err(CoreError::Contract("need at least one gene category".into()));
        }
        let d_k = config.d_k;
        let input_proj = Linear::init(store, "input_proj", d_in, d_k, rng);
        let gene_fcs = gene_set_sizes
            .iter()
            .enumerate()
            .map(|(n, &len)| GeneFc {
                weight: (len > 0)
                    .then(|| store.add_uniform(format!("gene_fc.{n}.weight"), d_k, len, len, rng)),
                bias: store.add(format!("gene_fc.{n}.bias"), Matrix::zeros(1, d_k)),
            })
            .collect();
        let gca = init_attention(store, "gca", d_k, rng);
        let enc_h = init_encoder(store, "enc_h", d_k, config.l_enc, rng);
        let enc_g = init_encoder(store, "enc_g", d_k, config.l_enc, rng);
        let pool_h = init_pool(store, "pool_h", d_k, config.d_attn, rng);
        let pool_g = init_pool(store, "pool_g", d_k, config.d_attn, rng);
        let head_h = store.add_uniform("head_h", d_k, d_k, d_k, rng);
        let head_g = store.add_uniform("head_g", d_k, d_k, d_k, rng);
        let fusion = FusionParams {
            hidden: Linear::init(store, "fusion.hidden", 2 * d_k, d_k, rng),
            out: Linear::init(store, "fusion.out", d_k, config.n_bins, rng),
        };
        Ok(HimtModel {
            config: config.clone(),
            input_proj,
            gene_fcs,
            gca,
            enc_h,
            enc_g,
            pool_h,
            pool_g,
            head_h,
            head_g,
            fusion,
        })
    }

    /// Record the full forward pass for one bag and return the hazard
    /// logits plus intermediate handles.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        bag: &MultimodalBag,
        phase: &mut Phase<'_>,
    ) -> Result<HimtForward> {
        let raw = tape.constant(bag.patches.clone());
        let h_bag = self.input_proj.forward(tape, store, raw)?;
        let g_bag = embed_gene_sets(tape, store, &self.gene_fcs, &bag.gene_sets)?;

        let gca = gca_forward(tape, store, &self.gca, g_bag, h_bag, self.config.n_heads)?;

        let encoded_h = encoder_forward(
            tape,
            store,
            &self.enc_h,
            gca.h_hat,
            self.config.n_heads,
            |tape, node| phase.dropout(tape, node),
        )?;
        let pool_h = gated_attention_pool(tape, store, &self.pool_h, encoded_h)?;
        let feat_h = bag_head(tape, store, self.head_h, pool_h.bag_feature)?;

        let encoded_g = encoder_forward(
            tape,
            store,
            &self.enc_g,
            g_bag,
            self.config.n_heads,
            |tape, node| phase.dropout(tape, node),
        )?;
        let pool_g = gated_attention_pool(tape, store, &self.pool_g, encoded_g)?;
        let feat_g = bag_head(tape, store, self.head_g, pool_g.bag_feature)?;

        let logits = fuse_and_risk(tape, store, &self.fusion, feat_h, feat_g, phase)?;

        Ok(HimtForward {
            h_bag,
            g_bag,
            gca,
            pool_h,
            pool_g,
            logits,
        })
    }
}
