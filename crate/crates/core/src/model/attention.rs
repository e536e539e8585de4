//! Scaled dot-product attention: the genomic-guided co-attention stage and
//! the permutation-equivariant self-attention inside the encoder blocks.
//!
//! Both share one multi-head kernel with learned Q/K/V projections and
//! 1/sqrt(d_head) logit scaling; queries and keys/values may come from
//! different inputs (co-attention) or the same one (self-attention).

use super::Linear;
use crate::error::{CoreError, Result};
use crate::graph::{NodeId, Tape};
use crate::param::{ParamId, ParamStore};

/// Projection triple for one attention stage; all `d_k x d_k`, no biases.
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
}

/// Co-attention projections mapping the genomic query bag onto the image
/// key/value bag.
pub type GcaParams = AttentionParams;

/// Recorded output of one attention stage.
#[derive(Clone, Debug)]
pub struct AttentionForward {
    /// Pre-softmax score matrices, one per head (query rows x key rows).
    pub head_logits: Vec<NodeId>,
    /// Row-stochastic attention, averaged over heads.
    pub weights: NodeId,
    /// Attended output, heads concatenated back to full width.
    pub output: NodeId,
}

/// Multi-head scaled dot-product attention.
///
/// `queries` is `n x d_k`, `keys_values` is `m x d_k`; the output is
/// `n x d_k`. `n_heads` must divide `d_k`.
pub fn scaled_attention(
    tape: &mut Tape,
    store: &ParamStore,
    params: &AttentionParams,
    queries: NodeId,
    keys_values: NodeId,
    n_heads: usize,
) -> Result<AttentionForward> {
    let d_k = tape.value(queries).cols();
    if tape.value(keys_values).cols() != d_k {
        return Err(CoreError::shape(
            "scaled_attention",
            tape.value(queries).shape(),
            tape.value(keys_values).shape(),
        ));
    }
    if n_heads == 0 || !d_k.is_multiple_of(n_heads) {
        return Err(CoreError::Contract(format!(
            "head count {n_heads} must divide width {d_k}"
        )));
    }
    let d_head = d_k / n_heads;

    let wq = tape.param(store, params.w_q);
    let wk = tape.param(store, params.w_k);
    let wv = tape.param(store, params.w_v);
    let wq_t = tape.transpose(wq);
    let wk_t = tape.transpose(wk);
    let wv_t = tape.transpose(wv);
    let q = tape.matmul(queries, wq_t)?;
    let k = tape.matmul(keys_values, wk_t)?;
    let v = tape.matmul(keys_values, wv_t)?;

    let mut head_logits = Vec::with_capacity(n_heads);
    let mut head_weights = Vec::with_capacity(n_heads);
    let mut head_outputs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (lo, hi) = (h * d_head, (h + 1) * d_head);
        let q_h = tape.slice_cols(q, lo, hi)?;
        let k_h = tape.slice_cols(k, lo, hi)?;
        let v_h = tape.slice_cols(v, lo, hi)?;
        let k_h_t = tape.transpose(k_h);
        let scores = tape.matmul(q_h, k_h_t)?;
        let logits = tape.scale(scores, 1.0 / (d_head as f64).sqrt());
        let weights = tape.softmax_rows(logits)?;
        let attended = tape.matmul(weights, v_h)?;
        head_logits.push(logits);
        head_weights.push(weights);
        head_outputs.push(attended);
    }

    let mut weights = head_weights[0];
    for &w in &head_weights[1..] {
        weights = tape.add(weights, w)?;
    }
    if n_heads > 1 {
        weights = tape.scale(weights, 1.0 / n_heads as f64);
    }
    let mut output = head_outputs[0];
    for &o in &head_outputs[1..] {
        output = tape.concat_cols(output, o)?;
    }

    Ok(AttentionForward {
        head_logits,
        weights,
        output,
    })
}

/// Genomic-guided co-attention output.
#[derive(Clone, Debug)]
pub struct GcaForward {
    /// Pre-softmax logits per head (`N x M`).
    pub head_logits: Vec<NodeId>,
    /// Row-stochastic co-attention matrix `N x M`.
    pub a_coa: NodeId,
    /// Gene-guided visual concepts `N x d_k`.
    pub h_hat: NodeId,
}

/// Map the M-instance image bag onto N gene-guided visual concepts:
/// row-softmax((G Wq)(H Wk)^T / sqrt(d_head)) applied to (H Wv).
pub fn gca_forward(
    tape: &mut Tape,
    store: &ParamStore,
    params: &GcaParams,
    g_bag: NodeId,
    h_bag: NodeId,
    n_heads: usize,
) -> Result<GcaForward> {
    let attn = scaled_attention(tape, store, params, g_bag, h_bag, n_heads)?;
    Ok(GcaForward {
        head_logits: attn.head_logits,
        a_coa: attn.weights,
        h_hat: attn.output,
    })
}

/// One encoder block: instance FC (affine + ReLU), then self-attention.
#[derive(Clone, Debug)]
pub struct EncoderLayerParams {
    pub attention: AttentionParams,
    pub phi: Linear,
}

/// Stack of encoder blocks applied before pooling.
#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub layers: Vec<EncoderLayerParams>,
}

/// Permutation-equivariant self-attention over a set of instances.
pub fn self_attention_set(
    tape: &mut Tape,
    store: &ParamStore,
    params: &AttentionParams,
    instances: NodeId,
    n_heads: usize,
) -> Result<NodeId> {
    Ok(scaled_attention(tape, store, params, instances, instances, n_heads)?.output)
}

/// Run the encoder stack: per layer, phi then self-attention. Dropout on
/// the phi activations is the caller's job via the `after_phi` hook, so
/// this stays a pure function; see `HimtModel::forward`.
pub fn encoder_forward(
    tape: &mut Tape,
    store: &ParamStore,
    params: &EncoderParams,
    input: NodeId,
    n_heads: usize,
    mut after_phi: impl FnMut(&mut Tape, NodeId) -> Result<NodeId>,
) -> Result<NodeId> {
    let mut h = input;
    for layer in &params.layers {
        let affine = layer.phi.forward(tape, store, h)?;
        let activated = tape.relu(affine);
        let activated = after_phi(tape, activated)?;
        h = self_attention_set(tape, store, &layer.attention, activated, n_heads)?;
    }
    Ok(h)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn attention_params(store: &mut ParamStore, w_q: Matrix, w_k: Matrix, w_v: Matrix) -> AttentionParams {
        AttentionParams {
            w_q: store.add("w_q", w_q),
            w_k: store.add("w_k", w_k),
            w_v: store.add("w_v", w_v),
        }
    }

    fn random_attention(store: &mut ParamStore, d_k: usize, rng: &mut ChaCha8Rng) -> AttentionParams {
        attention_params(
            store,
            random_matrix(rng, d_k, d_k),
            random_matrix(rng, d_k, d_k),
            random_matrix(rng, d_k, d_k),
        )
    }

    #[test]
    fn zero_query_projection_gives_uniform_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let (n, m, d_k) = (3, 7, 4);
        let mut store = ParamStore::new();
        let params = attention_params(
            &mut store,
            Matrix::zeros(d_k, d_k),
            random_matrix(&mut rng, d_k, d_k),
            random_matrix(&mut rng, d_k, d_k),
        );
        let g = random_matrix(&mut rng, n, d_k);
        let h = random_matrix(&mut rng, m, d_k);

        let mut tape = Tape::new();
        let g_node = tape.constant(g);
        let h_node = tape.constant(h.clone());
        let gca = gca_forward(&mut tape, &store, &params, g_node, h_node, 1).unwrap();

        let a = tape.value(gca.a_coa);
        for r in 0..n {
            for c in 0..m {
                assert_relative_eq!(a.get(r, c), 1.0 / m as f64, epsilon = 1e-12);
            }
        }
        // h_hat rows equal the mean of the value-projected instance rows.
        let v = h.matmul(&store.value(params.w_v).transpose()).unwrap();
        let h_hat = tape.value(gca.h_hat);
        for r in 0..n {
            for c in 0..d_k {
                let mean: f64 = (0..m).map(|i| v.get(i, c)).sum::<f64>() / m as f64;
                assert_relative_eq!(h_hat.get(r, c), mean, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn single_instance_bag_gets_all_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (n, d_k) = (4, 6);
        let mut store = ParamStore::new();
        let params = random_attention(&mut store, d_k, &mut rng);
        let g = random_matrix(&mut rng, n, d_k);
        let h = random_matrix(&mut rng, 1, d_k);

        let mut tape = Tape::new();
        let g_node = tape.constant(g);
        let h_node = tape.constant(h.clone());
        let gca = gca_forward(&mut tape, &store, &params, g_node, h_node, 1).unwrap();

        let a = tape.value(gca.a_coa);
        assert_eq!(a.shape(), (n, 1));
        for r in 0..n {
            assert_eq!(a.get(r, 0), 1.0);
        }
        let v = h.matmul(&store.value(params.w_v).transpose()).unwrap();
        let h_hat = tape.value(gca.h_hat);
        for r in 0..n {
            for c in 0..d_k {
                assert_relative_eq!(h_hat.get(r, c), v.get(0, c), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn full_size_bag_reduces_to_gene_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let (n, m, d_k) = (6, 3000, 256);
        let mut store = ParamStore::new();
        let params = random_attention(&mut store, d_k, &mut rng);
        let mut tape = Tape::new();
        let g_node = tape.constant(random_matrix(&mut rng, n, d_k));
        let h_node = tape.constant(random_matrix(&mut rng, m, d_k));
        let gca = gca_forward(&mut tape, &store, &params, g_node, h_node, 1).unwrap();
        assert_eq!(tape.value(gca.a_coa).shape(), (6, 3000));
        assert_eq!(tape.value(gca.h_hat).shape(), (6, 256));
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..20 {
            let (n, m, d_k) = (
                rng.random_range(1..6usize),
                rng.random_range(1..12usize),
                4,
            );
            let mut store = ParamStore::new();
            let params = random_attention(&mut store, d_k, &mut rng);
            let mut tape = Tape::new();
            let g_node = tape.constant(random_matrix(&mut rng, n, d_k));
            let h_node = tape.constant(random_matrix(&mut rng, m, d_k));
            let gca = gca_forward(&mut tape, &store, &params, g_node, h_node, 1).unwrap();
            let a = tape.value(gca.a_coa);
            for r in 0..n {
                let sum: f64 = a.row(r).iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
                assert!(a.row(r).iter().all(|&v| v > 0.0));
            }
        }
    }

    #[test]
    fn permuting_instances_permutes_coattention_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let (n, m, d_k) = (3, 9, 4);
        let mut store = ParamStore::new();
        let params = random_attention(&mut store, d_k, &mut rng);
        let g = random_matrix(&mut rng, n, d_k);
        let h = random_matrix(&mut rng, m, d_k);
        let perm: Vec<usize> = {
            use rand::seq::SliceRandom;
            let mut p: Vec<usize> = (0..m).collect();
            p.shuffle(&mut rng);
            p
        };
        let h_perm = Matrix::from_fn(m, d_k, |r, c| h.get(perm[r], c));

        let run = |h_in: Matrix| {
            let mut tape = Tape::new();
            let g_node = tape.constant(g.clone());
            let h_node = tape.constant(h_in);
            let gca = gca_forward(&mut tape, &store, &params, g_node, h_node, 1).unwrap();
            (
                tape.value(gca.a_coa).clone(),
                tape.value(gca.h_hat).clone(),
            )
        };
        let (a_base, h_hat_base) = run(h.clone());
        let (a_perm, h_hat_perm) = run(h_perm);

        for r in 0..n {
            for c in 0..m {
                assert_relative_eq!(a_perm.get(r, c), a_base.get(r, perm[c]), epsilon = 1e-10);
            }
        }
        for (x, y) in h_hat_perm.data().iter().zip(h_hat_base.data()) {
            assert_relative_eq!(x, y, epsilon = 1e-10);
        }
    }

    #[test]
    fn logit_scale_factor_tracks_width_exactly() {
        // Zero-padding features and weights to double d_k leaves the raw
        // scores untouched, so the logits shrink by exactly 1/sqrt(2).
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let (n, m, d_k) = (2, 5, 4);
        let g = random_matrix(&mut rng, n, d_k);
        let h = random_matrix(&mut rng, m, d_k);
        let w_q = random_matrix(&mut rng, d_k, d_k);
        let w_k = random_matrix(&mut rng, d_k, d_k);
        let w_v = random_matrix(&mut rng, d_k, d_k);

        let pad_cols = |m: &Matrix| Matrix::from_fn(m.rows(), 2 * d_k, |r, c| if c < d_k { m.get(r, c) } else { 0.0 });
        let pad_weight = |w: &Matrix| {
            Matrix::from_fn(2 * d_k, 2 * d_k, |r, c| {
                if r < d_k && c < d_k {
                    w.get(r, c)
                } else {
                    0.0
                }
            })
        };

        let logits_of = |g: Matrix, h: Matrix, wq: Matrix, wk: Matrix, wv: Matrix| {
            let mut store = ParamStore::new();
            let params = attention_params(&mut store, wq, wk, wv);
            let mut tape = Tape::new();
            let g_node = tape.constant(g);
            let h_node = tape.constant(h);
            let gca = gca_forward(&mut tape, &store, &params, g_node, h_node, 1).unwrap();
            tape.value(gca.head_logits[0]).clone()
        };

        let base = logits_of(g.clone(), h.clone(), w_q.clone(), w_k.clone(), w_v.clone());
        let padded = logits_of(pad_cols(&g), pad_cols(&h), pad_weight(&w_q), pad_weight(&w_k), pad_weight(&w_v));
        let factor = 1.0 / 2.0f64.sqrt();
        for (b, p) in base.data().iter().zip(padded.data()) {
            assert_relative_eq!(p, &(b * factor), epsilon = 1e-12, max_relative = 1e-12);
        }
    }

    #[test]
    fn gca_rejects_width_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let mut store = ParamStore::new();
        let params = random_attention(&mut store, 4, &mut rng);
        let mut tape = Tape::new();
        let g_node = tape.constant(random_matrix(&mut rng, 2, 4));
        let h_node = tape.constant(random_matrix(&mut rng, 3, 6));
        assert!(gca_forward(&mut tape, &store, &params, g_node, h_node, 1).is_err());
    }

    #[test]
    fn multi_head_output_keeps_width_and_stochastic_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        let (n, m, d_k) = (3, 8, 8);
        let mut store = ParamStore::new();
        let params = random_attention(&mut store, d_k, &mut rng);
        let mut tape = Tape::new();
        let g_node = tape.constant(random_matrix(&mut rng, n, d_k));
        let h_node = tape.constant(random_matrix(&mut rng, m, d_k));
        let gca = gca_forward(&mut tape, &store, &params, g_node, h_node, 2).unwrap();
        assert_eq!(gca.head_logits.len(), 2);
        assert_eq!(tape.value(gca.h_hat).shape(), (n, d_k));
        let a = tape.value(gca.a_coa);
        for r in 0..n {
            let sum: f64 = a.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn self_attention_single_instance_is_value_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(49);
        let d_k = 5;
        let mut store = ParamStore::new();
        let params = random_attention(&mut store, d_k, &mut rng);
        let h = random_matrix(&mut rng, 1, d_k);
        let mut tape = Tape::new();
        let h_node = tape.constant(h.clone());
        let out = self_attention_set(&mut tape, &store, &params, h_node, 1).unwrap();
        let expected = h.matmul(&store.value(params.w_v).transpose()).unwrap();
        for (x, y) in tape.value(out).data().iter().zip(expected.data()) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn identical_rows_attend_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let d_k = 4;
        let mut store = ParamStore::new();
        let params = random_attention(&mut store, d_k, &mut rng);
        let row: Vec<f64> = (0..d_k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = Matrix::from_rows(&vec![row; 5]).unwrap();
        let mut tape = Tape::new();
        let h_node = tape.constant(h);
        let out = self_attention_set(&mut tape, &store, &params, h_node, 1).unwrap();
        let out = tape.value(out);
        for r in 1..5 {
            assert_eq!(out.row(r), out.row(0));
        }
    }

    #[test]
    fn self_attention_is_permutation_equivariant() {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let (m, d_k) = (7, 4);
        let mut store = ParamStore::new();
        let params = random_attention(&mut store, d_k, &mut rng);
        let h = random_matrix(&mut rng, m, d_k);
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut rng);
        let h_perm = Matrix::from_fn(m, d_k, |r, c| h.get(perm[r], c));

        let run = |input: Matrix| {
            let mut tape = Tape::new();
            let node = tape.constant(input);
            let out = self_attention_set(&mut tape, &store, &params, node, 1).unwrap();
            tape.value(out).clone()
        };
        let base = run(h);
        let permuted = run(h_perm);
        for r in 0..m {
            for c in 0..d_k {
                assert_relative_eq!(permuted.get(r, c), base.get(perm[r], c), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn encoder_with_identity_phi_and_uniform_attention_averages_rows() {
        // phi = identity on positive inputs, zero Q/K give uniform
        // attention, V = identity: every output row is the row mean.
        let d_k = 3;
        let mut store = ParamStore::new();
        let phi = Linear {
            weight: store.add("phi.weight", Matrix::identity(d_k)),
            bias: store.add("phi.bias", Matrix::zeros(1, d_k)),
        };
        let attention = attention_params(
            &mut store,
            Matrix::zeros(d_k, d_k),
            Matrix::zeros(d_k, d_k),
            Matrix::identity(d_k),
        );
        let params = EncoderParams {
            layers: vec![EncoderLayerParams { attention, phi }],
        };
        let h = Matrix::from_vec(4, 3, vec![1., 2., 3., 4., 5., 6., 7., 8., 9., 10., 11., 12.]).unwrap();
        let mut tape = Tape::new();
        let node = tape.constant(h.clone());
        let out = encoder_forward(&mut tape, &store, &params, node, 1, |_, n| Ok(n)).unwrap();
        let out = tape.value(out);
        for c in 0..3 {
            let mean: f64 = (0..4).map(|r| h.get(r, c)).sum::<f64>() / 4.0;
            for r in 0..4 {
                assert_relative_eq!(out.get(r, c), mean, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn stacked_encoder_is_permutation_equivariant() {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let (m, d_k) = (6, 4);
        let mut store = ParamStore::new();
        let params = EncoderParams {
            layers: (0..2)
                .map(|l| EncoderLayerParams {
                    phi: Linear {
                        weight: store.add(format!("{l}.phi.w"), random_matrix(&mut rng, d_k, d_k)),
                        bias: store.add(format!("{l}.phi.b"), random_matrix(&mut rng, 1, d_k)),
                    },
                    attention: AttentionParams {
                        w_q: store.add(format!("{l}.wq"), random_matrix(&mut rng, d_k, d_k)),
                        w_k: store.add(format!("{l}.wk"), random_matrix(&mut rng, d_k, d_k)),
                        w_v: store.add(format!("{l}.wv"), random_matrix(&mut rng, d_k, d_k)),
                    },
                })
                .collect(),
        };
        let h = random_matrix(&mut rng, m, d_k);
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut rng);
        let h_perm = Matrix::from_fn(m, d_k, |r, c| h.get(perm[r], c));

        let run = |input: Matrix| {
            let mut tape = Tape::new();
            let node = tape.constant(input);
            let out = encoder_forward(&mut tape, &store, &params, node, 1, |_, n| Ok(n)).unwrap();
            tape.value(out).clone()
        };
        let base = run(h);
        let permuted = run(h_perm);
        for r in 0..m {
            for c in 0..d_k {
                assert_relative_eq!(permuted.get(r, c), base.get(perm[r], c), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn two_block_encoder_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let (m, d_k) = (4, 3);
        let mut store = ParamStore::new();
        let params = EncoderParams {
            layers: (0..2)
                .map(|l| EncoderLayerParams {
                    phi: Linear {
                        weight: store.add(format!("{l}.phi.w"), random_matrix(&mut rng, d_k, d_k)),
                        bias: store.add(format!("{l}.phi.b"), random_matrix(&mut rng, 1, d_k)),
                    },
                    attention: AttentionParams {
                        w_q: store.add(format!("{l}.wq"), random_matrix(&mut rng, d_k, d_k)),
                        w_k: store.add(format!("{l}.wk"), random_matrix(&mut rng, d_k, d_k)),
                        w_v: store.add(format!("{l}.wv"), random_matrix(&mut rng, d_k, d_k)),
                    },
                })
                .collect(),
        };
        let h = random_matrix(&mut rng, m, d_k);
        let err = crate::gradcheck::gradient_check(
            &mut store,
            |tape, store| {
                let node = tape.constant(h.clone());
                let out = encoder_forward(tape, store, &params, node, 1, |_, n| Ok(n))?;
                let squared = tape.mul(out, out)?;
                Ok(tape.sum(squared))
            },
            30,
            crate::gradcheck::DEFAULT_STEP,
            7,
        )
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn gca_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let (n, m, d_k) = (3, 6, 4);
        let mut store = ParamStore::new();
        let params = random_attention(&mut store, d_k, &mut rng);
        let g = random_matrix(&mut rng, n, d_k);
        let h = random_matrix(&mut rng, m, d_k);
        let err = crate::gradcheck::gradient_check(
            &mut store,
            |tape, store| {
                let g_node = tape.constant(g.clone());
                let h_node = tape.constant(h.clone());
                let gca = gca_forward(tape, store, &params, g_node, h_node, 1)?;
                let squared = tape.mul(gca.h_hat, gca.h_hat)?;
                Ok(tape.sum(squared))
            },
            30,
            crate::gradcheck::DEFAULT_STEP,
            8,
        )
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }
}
