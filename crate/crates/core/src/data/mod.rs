//! Data ingestion: per-patient patch-feature files, gene expression,
//! functional gene signatures, hierarchical bag assembly, and a synthetic
//! dataset generator with a planted risk function.
//!
//! Loading and synthesis are pure functions of paths and seeds; loaded
//! records are immutable afterwards and safe to share across threads.

mod bag;
mod io;
mod synth;

pub use bag::{assemble_bag, group_genes, subsample_level, MultimodalBag};
pub use io::{
    load_dataset, load_labels, load_patient, load_signature, write_labels, write_matrix_csv,
    write_signature, Dataset, LabelRow, LoadedPatient,
};
pub use synth::{synth_generate, write_dataset, SynthConfig, SynthDataset};

use crate::error::{CoreError, Result};
use crate::matrix::Matrix;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

/// WSI magnification level a patch-feature file was sampled from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Magnification {
    X5,
    X10,
    X20,
}

impl Magnification {
    pub const ALL: [Magnification; 3] = [Magnification::X5, Magnification::X10, Magnification::X20];

    /// File-name token, e.g. `5x` in `patient_5x.csv`.
    pub fn token(self) -> &'static str {
        match self {
            Magnification::X5 => "5x",
            Magnification::X10 => "10x",
            Magnification::X20 => "20x",
        }
    }
}

impl fmt::Display for Magnification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Magnification {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "5x" => Ok(Magnification::X5),
            "10x" => Ok(Magnification::X10),
            "20x" => Ok(Magnification::X20),
            other => Err(CoreError::Contract(format!(
                "unknown magnification '{other}' (expected 5x, 10x, or 20x)"
            ))),
        }
    }
}

/// Patch features from one magnification level.
#[derive(Clone, Debug)]
pub struct PatchFeatureSet {
    pub magnification: Magnification,
    /// One row per patch, `d_in` columns.
    pub features: Matrix,
}

/// Everything loaded for one patient.
#[derive(Clone, Debug)]
pub struct PatientRecord {
    pub patient_id: String,
    /// Observed survival time in months; a lower bound when censored.
    pub surv_months: f64,
    /// True when the event was not observed within follow-up.
    pub censored: bool,
    pub feature_sets: Vec<PatchFeatureSet>,
    /// Gene expression values in file order.
    pub gene_expression: Vec<(String, f64)>,
}

impl PatientRecord {
    pub fn feature_width(&self) -> usize {
        self.feature_sets
            .first()
            .map(|fs| fs.features.cols())
            .unwrap_or(0)
    }
}

/// Map from gene symbol to functional category index.
#[derive(Clone, Debug)]
pub struct GeneSignature {
    categories: HashMap<String, usize>,
    n_categories: usize,
}

impl GeneSignature {
    pub fn new(entries: impl IntoIterator<Item = (String, usize)>) -> Result<Self> {
        let categories: HashMap<String, usize> = entries.into_iter().collect();
        if categories.is_empty() {
            return Err(CoreError::Contract("gene signature must not be empty".into()));
        }
        let n_categories = categories.values().max().unwrap() + 1;
        Ok(GeneSignature {
            categories,
            n_categories,
        })
    }

    pub fn category_of(&self, symbol: &str) -> Option<usize> {
        self.categories.get(symbol).copied()
    }

    pub fn n_categories(&self) -> usize {
        self.n_categories
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    /// Entries sorted by (category, symbol), the canonical file order.
    pub fn sorted_entries(&self) -> Vec<(String, usize)> {
        let mut entries: Vec<(String, usize)> = self
            .categories
            .iter()
            .map(|(s, &c)| (s.clone(), c))
            .collect();
        entries.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)));
        entries
    }
}
