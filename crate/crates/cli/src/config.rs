//! Flat key-value experiment configuration.
//!
//! The file format is one `key = value` pair per line, `#` comments,
//! unknown keys rejected. Every key has a default, so a missing file or an
//! empty file is a valid configuration. Batch size is fixed at 1
//! throughout (bags vary in size), so there is no key for it.

use crate::error::{CliError, Result};
use himt_core::data::Magnification;
use himt_core::model::HimtConfig;
use himt_core::{rng, AdamConfig, SynthConfig};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

/// All experiment knobs.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// Dataset directory holding labels.csv, signature.tsv, and patient files.
    pub data_dir: String,
    pub levels: Vec<Magnification>,
    pub per_level_k: usize,
    pub d_k: usize,
    pub d_attn: usize,
    pub n_heads: usize,
    pub l_enc: usize,
    pub n_bins: usize,
    pub beta: f64,
    /// Use the survival-form third likelihood term instead of the hazard.
    pub printed_eq8: bool,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub k_folds: usize,
    pub seed: u64,
    pub dropout: f64,
    pub synth_patients: usize,
    pub synth_rows_per_level: usize,
    pub synth_d_in: usize,
    pub synth_genes_per_category: Vec<usize>,
    pub synth_censor_rate: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data_dir: "data".into(),
            levels: Magnification::ALL.to_vec(),
            per_level_k: 1000,
            d_k: 256,
            d_attn: 64,
            n_heads: 1,
            l_enc: 1,
            n_bins: 4,
            beta: 0.0,
            printed_eq8: false,
            lr: 2e-4,
            weight_decay: 1e-5,
            epochs: 20,
            k_folds: 5,
            seed: 42,
            dropout: 0.25,
            synth_patients: 200,
            synth_rows_per_level: 40,
            synth_d_in: 16,
            synth_genes_per_category: vec![4; 6],
            synth_censor_rate: 0.3,
        }
    }
}

fn parse_levels(value: &str) -> Result<Vec<Magnification>> {
    let levels: Vec<Magnification> = value
        .split(',')
        .map(|t| Magnification::from_str(t).map_err(CliError::Core))
        .collect::<Result<_>>()?;
    if levels.is_empty() {
        return Err(CliError::Config("levels must name at least one magnification".into()));
    }
    let mut dedup = levels.clone();
    dedup.sort();
    dedup.dedup();
    if dedup.len() != levels.len() {
        return Err(CliError::Config(format!("duplicate level in '{value}'")));
    }
    Ok(levels)
}

fn parse_counts(value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Config(format!("invalid count '{t}'")))
        })
        .collect()
}

impl ExperimentConfig {
    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse::<T>()
                .map_err(|_| CliError::Config(format!("invalid value '{value}' for key '{key}'")))
        }
        let value = value.trim();
        match key {
            "data_dir" => self.data_dir = value.to_string(),
            "levels" => self.levels = parse_levels(value)?,
            "per_level_k" => self.per_level_k = num(key, value)?,
            "d_k" => self.d_k = num(key, value)?,
            "d_attn" => self.d_attn = num(key, value)?,
            "n_heads" => self.n_heads = num(key, value)?,
            "l_enc" => self.l_enc = num(key, value)?,
            "n_bins" => self.n_bins = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "loss.printed_eq8" => self.printed_eq8 = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "k_folds" => self.k_folds = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "synth.patients" => self.synth_patients = num(key, value)?,
            "synth.rows_per_level" => self.synth_rows_per_level = num(key, value)?,
            "synth.d_in" => self.synth_d_in = num(key, value)?,
            "synth.genes_per_category" => self.synth_genes_per_category = parse_counts(value)?,
            "synth.censor_rate" => self.synth_censor_rate = num(key, value)?,
            other => {
                return Err(CliError::Config(format!("unknown configuration key '{other}'")));
            }
        }
        Ok(())
    }

    /// Parse a config file's text.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = ExperimentConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!(
                    "line {}: expected 'key = value', got '{raw}'",
                    idx + 1
                )));
            };
            config.set(key.trim(), value)?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Path {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(CliError::Config(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CliError::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if self.k_folds < 2 {
            return Err(CliError::Config(format!("k_folds must be at least 2, got {}", self.k_folds)));
        }
        if self.n_heads == 0 || !self.d_k.is_multiple_of(self.n_heads) {
            return Err(CliError::Config(format!(
                "n_heads {} must divide d_k {}",
                self.n_heads, self.d_k
            )));
        }
        if self.epochs == 0 || self.per_level_k == 0 || self.n_bins < 2 {
            return Err(CliError::Config("epochs, per_level_k must be positive and n_bins >= 2".into()));
        }
        Ok(())
    }

    pub fn model_config(&self) -> HimtConfig {
        HimtConfig {
            d_k: self.d_k,
            d_attn: self.d_attn,
            n_heads: self.n_heads,
            l_enc: self.l_enc,
            n_bins: self.n_bins,
            dropout: self.dropout,
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            patients: self.synth_patients,
            levels: self.levels.clone(),
            rows_per_level: self.synth_rows_per_level,
            d_in: self.synth_d_in,
            genes_per_category: self.synth_genes_per_category.clone(),
            censor_rate: self.synth_censor_rate,
            ..SynthConfig::default()
        }
    }

    /// Canonical text form: every key, sorted, one per line.
    pub fn canonical(&self) -> String {
        let levels: Vec<&str> = self.levels.iter().map(|m| m.token()).collect();
        let genes: Vec<String> = self.synth_genes_per_category.iter().map(|n| n.to_string()).collect();
        let mut pairs: Vec<(String, String)> = vec![
            ("data_dir".into(), self.data_dir.clone()),
            ("levels".into(), levels.join(",")),
            ("per_level_k".into(), self.per_level_k.to_string()),
            ("d_k".into(), self.d_k.to_string()),
            ("d_attn".into(), self.d_attn.to_string()),
            ("n_heads".into(), self.n_heads.to_string()),
            ("l_enc".into(), self.l_enc.to_string()),
            ("n_bins".into(), self.n_bins.to_string()),
            ("beta".into(), self.beta.to_string()),
            ("loss.printed_eq8".into(), self.printed_eq8.to_string()),
            ("lr".into(), self.lr.to_string()),
            ("weight_decay".into(), self.weight_decay.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("k_folds".into(), self.k_folds.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("dropout".into(), self.dropout.to_string()),
            ("synth.patients".into(), self.synth_patients.to_string()),
            ("synth.rows_per_level".into(), self.synth_rows_per_level.to_string()),
            ("synth.d_in".into(), self.synth_d_in.to_string()),
            ("synth.genes_per_category".into(), genes.join(",")),
            ("synth.censor_rate".into(), self.synth_censor_rate.to_string()),
        ];
        pairs.sort();
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Stable hash of the canonical form, recorded in run logs.
    pub fn snapshot_hash(&self) -> String {
        format!("{:016x}", rng::content_hash(&self.canonical()))
    }
}
