//! Shared fixtures for the criterion benchmarks.

use himt_core::data::{Magnification, MultimodalBag};
use himt_core::model::{HimtConfig, HimtModel};
use himt_core::{Matrix, ParamStore};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn random_matrix(seed: u64, rows: usize, cols: usize) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// A full-size bag: M instances of width d_in, six gene sets.
pub fn bench_bag(seed: u64, m: usize, d_in: usize) -> MultimodalBag {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MultimodalBag {
        patient_id: "bench".into(),
        patches: Matrix::from_fn(m, d_in, |_, _| rng.random_range(-1.0..1.0)),
        level_rows: vec![(Magnification::X20, m)],
        gene_sets: (0..6)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect(),
        surv_months: 12.0,
        censored: false,
    }
}

pub fn bench_model(seed: u64, d_in: usize, d_k: usize) -> (HimtModel, ParamStore) {
    let config = HimtConfig {
        d_k,
        d_attn: 64,
        n_heads: 1,
        l_enc: 1,
        n_bins: 4,
        dropout: 0.0,
    };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = HimtModel::init(&config, d_in, &[4; 6], &mut store, &mut rng).expect("valid config");
    (model, store)
}
