//! Multimodal survival prediction over whole-slide patch features and
//! grouped gene expression.
//!
//! The crate is self-contained: a dense-matrix reverse-mode autodiff core
//! drives a genomic-guided co-attention stage, set-based transformer
//! encoders with gated attention pooling, and a discrete-time censored
//! survival loss, evaluated with concordance and fixed-horizon AUC under
//! k-fold cross-validation. Data enters as per-patient CSV feature bags at
//! one or more magnification levels; a seeded synthetic generator with a
//! planted risk function covers end-to-end verification.

pub mod adam;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod matrix;
pub mod model;
pub mod param;
pub mod rng;
pub mod survival;

pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use data::{
    assemble_bag, group_genes, load_dataset, subsample_level, synth_generate, write_dataset,
    Dataset, GeneSignature, Magnification, MultimodalBag, PatchFeatureSet, PatientRecord,
    SynthConfig, SynthDataset,
};
pub use error::{CoreError, Result};
pub use eval::{auc, c_index, kfold_split, summarize, FoldReport, MetricSummary, RiskRow, RiskTable};
pub use gradcheck::gradient_check;
pub use graph::{NodeId, Tape};
pub use matrix::Matrix;
pub use model::{HimtConfig, HimtForward, HimtModel, Phase};
pub use param::{ParamId, ParamStore, Parameter};
pub use survival::{
    combined_loss, hazard_nodes, nll_loss, uncensored_loss, DiscreteLabel, HazardCurve,
    HazardNodes, TimeBins,
};
