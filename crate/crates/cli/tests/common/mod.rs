//! Shared fixtures for harness tests: small synthetic datasets and configs.

use himt_cli::ExperimentConfig;
use std::path::Path;

/// Config sized for fast end-to-end runs on synthetic data.
pub fn small_config(data_dir: &Path) -> ExperimentConfig {
    ExperimentConfig {
        data_dir: data_dir.display().to_string(),
        per_level_k: 40,
        d_k: 32,
        d_attn: 16,
        epochs: 5,
        k_folds: 2,
        seed: 7,
        dropout: 0.0,
        synth_patients: 36,
        synth_rows_per_level: 12,
        synth_d_in: 8,
        synth_genes_per_category: vec![3; 4],
        synth_censor_rate: 0.25,
        ..ExperimentConfig::default()
    }
}

/// Generate the config's synthetic dataset into its `data_dir`.
pub fn write_synth_data(config: &ExperimentConfig) {
    himt_cli::run_synth(config, Path::new(&config.data_dir)).expect("synth dataset");
}
