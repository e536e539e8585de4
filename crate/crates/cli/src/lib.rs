//! Command-line experiment harness over the survival-prediction core:
//! `train`, `eval`, `synth`, and `ablate`, with flat-file configuration,
//! labeled RNG streams, and CSV result files.

pub mod config;
pub mod error;
pub mod experiment;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use experiment::{
    ablation_settings, export_attention, folds_of, init_fold_model, load_fold_model,
    median_event_time, prepare, risk_table, run_ablation, run_eval, run_synth, run_train,
    train_fold, AblationRow, EvalOutcome, PreparedData, SynthOutcome, TrainOutcome, TrainedFold,
};
