//! Seeded synthetic survival datasets with a planted risk function.
//!
//! Patch features are drawn from level-specific Gaussian mixtures around a
//! per-patient latent vector; a hidden weight vector `w` turns the mean
//! patch feature into a planted risk, and event times follow a
//! proportional-hazards exponential draw so log-time decreases in risk.
//! Censoring flips an independent coin and moves the observed time
//! uniformly into (0, event time). Everything is a pure function of the
//! config and seed.

use super::io::{write_genes_csv, write_matrix_csv, write_labels, write_signature, LabelRow};
use super::{GeneSignature, Magnification, PatchFeatureSet, PatientRecord};
use crate::error::{CoreError, Result};
use crate::matrix::Matrix;
use crate::rng;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::path::Path;

/// Knobs for the generator.
#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub patients: usize,
    pub levels: Vec<Magnification>,
    pub rows_per_level: usize,
    pub d_in: usize,
    /// Gene count in each functional category; the vector length is N.
    pub genes_per_category: Vec<usize>,
    /// Probability a patient is censored.
    pub censor_rate: f64,
    /// Standard deviation of the planted risk across patients.
    pub risk_scale: f64,
    /// Baseline hazard rate; median event time at zero risk is ln(2)/rate.
    pub baseline_hazard: f64,
    /// Patch noise around the patient latent vector.
    pub patch_noise: f64,
    /// Observation noise on gene values.
    pub gene_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            patients: 200,
            levels: Magnification::ALL.to_vec(),
            rows_per_level: 40,
            d_in: 16,
            genes_per_category: vec![4; 6],
            censor_rate: 0.3,
            risk_scale: 2.5,
            baseline_hazard: 0.03,
            patch_noise: 0.5,
            gene_noise: 0.5,
        }
    }
}

/// Generated cohort plus its ground truth.
#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub records: Vec<PatientRecord>,
    pub signature: GeneSignature,
    /// Planted per-patient risk, aligned with `records`.
    pub true_risks: Vec<f64>,
}

impl SynthDataset {
    pub fn labels(&self) -> Vec<LabelRow> {
        self.records
            .iter()
            .map(|r| LabelRow {
                patient_id: r.patient_id.clone(),
                surv_months: r.surv_months,
                censored: r.censored,
            })
            .collect()
    }
}

fn gene_symbol(category: usize, index: usize) -> String {
    format!("C{category}G{index:03}")
}

/// Generate a dataset. Deterministic per (config, seed).
pub fn synth_generate(config: &SynthConfig, seed: u64) -> Result<SynthDataset> {
    if !(0.0..=1.0).contains(&config.censor_rate) {
        return Err(CoreError::Contract(format!(
            "censor rate must lie in [0, 1], got {}",
            config.censor_rate
        )));
    }
    if config.patients == 0 || config.rows_per_level == 0 || config.d_in == 0 {
        return Err(CoreError::Contract("patients, rows_per_level, and d_in must be positive".into()));
    }
    if config.levels.is_empty() || config.genes_per_category.is_empty() {
        return Err(CoreError::Contract("need at least one level and one gene category".into()));
    }

    let signature = GeneSignature::new(
        config
            .genes_per_category
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| (0..n).map(move |i| (gene_symbol(c, i), c))),
    )?;

    let unit_normal = Normal::new(0.0, 1.0).expect("valid normal");

    // Hidden risk direction, scaled so w . latent has std risk_scale.
    let mut w_rng = rng::stream(seed, "synth/w");
    let mut w: Vec<f64> = (0..config.d_in).map(|_| unit_normal.sample(&mut w_rng)).collect();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut w {
        *v *= config.risk_scale / norm;
    }

    // Fixed per-level offsets and mixture component centers.
    let mut level_rng = rng::stream(seed, "synth/levels");
    let n_components = 3;
    let mut level_offsets = Vec::new();
    let mut level_components = Vec::new();
    for _ in &config.levels {
        let offset: Vec<f64> = (0..config.d_in).map(|_| 0.5 * unit_normal.sample(&mut level_rng)).collect();
        let components: Vec<Vec<f64>> = (0..n_components)
            .map(|_| (0..config.d_in).map(|_| 0.5 * unit_normal.sample(&mut level_rng)).collect())
            .collect();
        level_offsets.push(offset);
        level_components.push(components);
    }

    // Per-category gene loadings onto the planted risk.
    let mut gene_rng = rng::stream(seed, "synth/gene_loadings");
    let gene_loadings: Vec<Vec<f64>> = config
        .genes_per_category
        .iter()
        .map(|&n| (0..n).map(|_| 0.5 * unit_normal.sample(&mut gene_rng)).collect())
        .collect();

    let mut records = Vec::with_capacity(config.patients);
    let mut true_risks = Vec::with_capacity(config.patients);
    for p in 0..config.patients {
        let patient_id = format!("synth{p:04}");
        let mut prng = rng::substream(seed, "synth/patient", p as u64);

        // Patient latent vector shared by all levels.
        let latent: Vec<f64> = (0..config.d_in).map(|_| unit_normal.sample(&mut prng)).collect();

        let mut feature_sets = Vec::new();
        let mut feature_sum = vec![0.0f64; config.d_in];
        let mut feature_count = 0usize;
        for (li, &mag) in config.levels.iter().enumerate() {
            let mut features = Matrix::zeros(config.rows_per_level, config.d_in);
            for r in 0..config.rows_per_level {
                let comp = prng.random_range(0..n_components);
                for c in 0..config.d_in {
                    let value = latent[c]
                        + level_offsets[li][c]
                        + level_components[li][comp][c]
                        + config.patch_noise * unit_normal.sample(&mut prng);
                    features.set(r, c, value);
                    feature_sum[c] += value;
                    feature_count += 1;
                }
            }
            feature_sets.push(PatchFeatureSet {
                magnification: mag,
                features,
            });
        }
        let rows_total = feature_count / config.d_in;
        let risk: f64 = w
            .iter()
            .zip(&feature_sum)
            .map(|(wi, s)| wi * s / rows_total as f64)
            .sum();

        // Proportional hazards: T = Exp(1) / (baseline * exp(risk)).
        let u: f64 = prng.random_range(0.0f64..1.0).max(1e-12);
        let event_time = -u.ln() / (config.baseline_hazard * risk.exp());
        let censored = prng.random_bool(config.censor_rate);
        let surv_months = if censored {
            (prng.random_range(0.0f64..1.0) * event_time).max(0.01)
        } else {
            event_time.max(0.01)
        };

        let gene_expression: Vec<(String, f64)> = gene_loadings
            .iter()
            .enumerate()
            .flat_map(|(c, loadings)| {
                loadings.iter().enumerate().map(|(i, &a)| {
                    let value = a * risk + config.gene_noise * unit_normal.sample(&mut prng);
                    (gene_symbol(c, i), value)
                }).collect::<Vec<_>>()
            })
            .collect();

        records.push(PatientRecord {
            patient_id,
            surv_months,
            censored,
            feature_sets,
            gene_expression,
        });
        true_risks.push(risk);
    }

    Ok(SynthDataset {
        records,
        signature,
        true_risks,
    })
}

/// Write a generated dataset in the standard directory layout.
pub fn write_dataset(dataset: &SynthDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| CoreError::Path {
        path: dir.display().to_string(),
        source,
    })?;
    write_labels(&dir.join("labels.csv"), &dataset.labels())?;
    write_signature(&dir.join("signature.tsv"), &dataset.signature)?;
    for record in &dataset.records {
        for fs in &record.feature_sets {
            let path = dir.join(format!("{}_{}.csv", record.patient_id, fs.magnification.token()));
            write_matrix_csv(&path, &fs.features)?;
        }
        let genes = dir.join(format!("{}_genes.csv", record.patient_id));
        write_genes_csv(&genes, &record.gene_expression)?;
    }
    Ok(())
}
