//! Hierarchical bag assembly: per-level subsampling, level-major stacking,
//! and grouping of gene expression into functional sets.

use super::{GeneSignature, Magnification, PatchFeatureSet, PatientRecord};
use crate::error::{CoreError, Result};
use crate::matrix::Matrix;
use crate::rng;
use rand::seq::index;

/// Assembled multimodal inputs for one patient.
///
/// `patches` holds the subsampled raw feature rows (level-major, then the
/// sampled order within each level) at the on-disk width `d_in`; the model
/// projects them to its working width on the autodiff graph so the
/// projection stays trainable. Downstream code must not depend on row
/// order; the whole pipeline is checked to be permutation-invariant.
#[derive(Clone, Debug)]
pub struct MultimodalBag {
    pub patient_id: String,
    /// M x d_in subsampled patch features.
    pub patches: Matrix,
    /// Per-level row counts, in the order the levels were stacked.
    pub level_rows: Vec<(Magnification, usize)>,
    /// Raw gene-expression values grouped by functional category.
    pub gene_sets: Vec<Vec<f64>>,
    pub surv_months: f64,
    pub censored: bool,
}

impl MultimodalBag {
    /// Total instance count M.
    pub fn n_instances(&self) -> usize {
        self.patches.rows()
    }

    /// Number of gene sets N.
    pub fn n_gene_sets(&self) -> usize {
        self.gene_sets.len()
    }
}

/// Sample `k` distinct rows uniformly without replacement; levels with at
/// most `k` rows are kept whole. Deterministic for a fixed seed.
pub fn subsample_level(fs: &PatchFeatureSet, k: usize, seed: u64) -> Result<PatchFeatureSet> {
    if k == 0 {
        return Err(CoreError::Contract("subsample size k must be at least 1".into()));
    }
    let m = fs.features.rows();
    if m <= k {
        return Ok(fs.clone());
    }
    let mut rng = rng::substream(seed, "subsample", fs.magnification as u64);
    let picked = index::sample(&mut rng, m, k);
    let rows: Vec<Vec<f64>> = picked.iter().map(|r| fs.features.row(r).to_vec()).collect();
    Ok(PatchFeatureSet {
        magnification: fs.magnification,
        features: Matrix::from_rows(&rows)?,
    })
}

/// Group a patient's gene expression into the signature's categories,
/// preserving file order within each set. Symbols unknown to the signature
/// were already dropped at load; empty categories yield empty sets.
pub fn group_genes(expression: &[(String, f64)], signature: &GeneSignature) -> Vec<Vec<f64>> {
    let mut sets = vec![Vec::new(); signature.n_categories()];
    for (symbol, value) in expression {
        if let Some(category) = signature.category_of(symbol) {
            sets[category].push(*value);
        }
    }
    sets
}

/// Subsample every level of `record` to at most `per_level_k` rows, stack
/// level-major, and group the genes. `M = sum(min(k, rows_in_level))`.
pub fn assemble_bag(
    record: &PatientRecord,
    per_level_k: usize,
    signature: &GeneSignature,
    seed: u64,
) -> Result<MultimodalBag> {
    if record.feature_sets.is_empty() {
        return Err(CoreError::Contract(format!(
            "patient {} has no feature sets to assemble",
            record.patient_id
        )));
    }
    let patient_seed = rng::content_hash(&record.patient_id) ^ seed;
    let mut stacked: Vec<Vec<f64>> = Vec::new();
    let mut level_rows = Vec::new();
    let mut sets: Vec<&PatchFeatureSet> = record.feature_sets.iter().collect();
    sets.sort_by_key(|fs| fs.magnification);
    for fs in sets {
        let sampled = subsample_level(fs, per_level_k, patient_seed)?;
        level_rows.push((fs.magnification, sampled.features.rows()));
        for r in 0..sampled.features.rows() {
            stacked.push(sampled.features.row(r).to_vec());
        }
    }
    Ok(MultimodalBag {
        patient_id: record.patient_id.clone(),
        patches: Matrix::from_rows(&stacked)?,
        level_rows,
        gene_sets: group_genes(&record.gene_expression, signature),
        surv_months: record.surv_months,
        censored: record.censored,
    })
}
