//! Fold orchestration: data preparation, per-fold training (batch size 1),
//! frozen-parameter evaluation, and result files.
//!
//! Randomness is split into labeled streams derived from the master seed
//! (sampling, init, folds, order, dropout, synthesis), so every output is
//! a pure function of (config, seed); folds may run in parallel because
//! each owns an independent parameter set and RNG streams.

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use himt_core::data::{assemble_bag, load_dataset, MultimodalBag};
use himt_core::model::{
    apply_checkpoint, load_checkpoint, save_checkpoint, HimtModel, Phase,
};
use himt_core::survival::{combined_loss, hazard_nodes, DiscreteLabel, HazardCurve, TimeBins};
use himt_core::{
    c_index, kfold_split, rng, summarize, Adam, FoldReport, MetricSummary, ParamStore, RiskRow,
    RiskTable, Tape,
};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Assembled bags plus the shapes the model needs.
pub struct PreparedData {
    pub bags: Vec<MultimodalBag>,
    pub ids: Vec<String>,
    pub d_in: usize,
    pub gene_set_sizes: Vec<usize>,
}

impl PreparedData {
    pub fn bag(&self, id: &str) -> &MultimodalBag {
        self.bags
            .iter()
            .find(|b| b.patient_id == id)
            .expect("patient id came from this dataset")
    }
}

/// Load the dataset directory and assemble one bag per patient.
pub fn prepare(config: &ExperimentConfig) -> Result<PreparedData> {
    let dataset = load_dataset(Path::new(&config.data_dir), &config.levels)?;
    for symbol in &dataset.unknown_genes {
        eprintln!("warning: gene symbol '{symbol}' missing from signature; dropped");
    }
    let mut bags = Vec::with_capacity(dataset.records.len());
    for record in &dataset.records {
        bags.push(assemble_bag(
            record,
            config.per_level_k,
            &dataset.signature,
            config.seed,
        )?);
    }
    let d_in = dataset.records[0].feature_width();
    for r in &dataset.records {
        if r.feature_width() != d_in {
            return Err(CliError::Config(format!(
                "patient {} has feature width {}, expected {}",
                r.patient_id,
                r.feature_width(),
                d_in
            )));
        }
    }
    let gene_set_sizes: Vec<usize> = bags[0].gene_sets.iter().map(Vec::len).collect();
    for b in &bags {
        let sizes: Vec<usize> = b.gene_sets.iter().map(Vec::len).collect();
        if sizes != gene_set_sizes {
            return Err(CliError::Config(format!(
                "patient {} has gene set sizes {sizes:?}, expected {gene_set_sizes:?}; \
                 the gene panel must be identical across patients",
                b.patient_id
            )));
        }
    }
    let ids = bags.iter().map(|b| b.patient_id.clone()).collect();
    Ok(PreparedData {
        bags,
        ids,
        d_in,
        gene_set_sizes,
    })
}

/// The cross-validation split for this config.
pub fn folds_of(config: &ExperimentConfig, data: &PreparedData) -> Result<Vec<(Vec<String>, Vec<String>)>> {
    Ok(kfold_split(&data.ids, config.k_folds, config.seed)?)
}

/// Initialize a model (seeded per fold) in a fresh store.
pub fn init_fold_model(
    config: &ExperimentConfig,
    data: &PreparedData,
    fold: usize,
) -> Result<(HimtModel, ParamStore)> {
    let mut store = ParamStore::new();
    let mut init_rng = rng::substream(config.seed, "init", fold as u64);
    let model = HimtModel::init(
        &config.model_config(),
        data.d_in,
        &data.gene_set_sizes,
        &mut store,
        &mut init_rng,
    )?;
    Ok((model, store))
}

/// One trained fold.
pub struct TrainedFold {
    pub fold: usize,
    pub model: HimtModel,
    pub store: ParamStore,
    pub bins: TimeBins,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Train one fold: fit bins on the training fold, then iterate patients
/// one at a time (forward, combined loss, backward, Adam step).
pub fn train_fold(
    config: &ExperimentConfig,
    data: &PreparedData,
    fold: usize,
    train_ids: &[String],
) -> Result<TrainedFold> {
    let event_times: Vec<f64> = train_ids
        .iter()
        .map(|id| data.bag(id))
        .filter(|b| !b.censored)
        .map(|b| b.surv_months)
        .collect();
    let bins = TimeBins::fit(&event_times, config.n_bins)?;

    let labels: Vec<DiscreteLabel> = train_ids
        .iter()
        .map(|id| {
            let bag = data.bag(id);
            Ok(DiscreteLabel::new(bins.discretize(bag.surv_months)?, bag.censored))
        })
        .collect::<Result<_>>()?;

    let (model, mut store) = init_fold_model(config, data, fold)?;
    let mut adam = Adam::new(&store, &config.adam_config());
    let mut dropout_rng = rng::substream(config.seed, "dropout", fold as u64);

    let mut order: Vec<usize> = (0..train_ids.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut order_rng = rng::substream(
            config.seed,
            "order",
            fold as u64 * 1_000_000 + epoch as u64,
        );
        order.shuffle(&mut order_rng);

        let mut loss_sum = 0.0;
        for &i in &order {
            let bag = data.bag(&train_ids[i]);
            let mut tape = Tape::new();
            let mut phase = Phase::train(config.dropout, &mut dropout_rng);
            let forward = model.forward(&mut tape, &store, bag, &mut phase)?;
            let curve = hazard_nodes(&mut tape, forward.logits)?;
            let loss = combined_loss(&mut tape, &curve, labels[i], config.beta, config.printed_eq8)?;
            let loss_value = tape.value(loss).get(0, 0);
            if !loss_value.is_finite() {
                return Err(CliError::Training(format!(
                    "non-finite loss at fold {fold} epoch {epoch} patient {}",
                    train_ids[i]
                )));
            }
            loss_sum += loss_value;
            tape.backward(loss, &mut store)?;
            adam.step(&mut store)?;
        }
        epoch_losses.push(loss_sum / train_ids.len() as f64);
    }

    Ok(TrainedFold {
        fold,
        model,
        store,
        bins,
        epoch_losses,
    })
}

/// Risk scores for a list of patients under frozen parameters.
pub fn risk_table(
    data: &PreparedData,
    ids: &[String],
    model: &HimtModel,
    store: &ParamStore,
) -> Result<RiskTable> {
    let rows: Vec<RiskRow> = ids
        .iter()
        .map(|id| {
            let bag = data.bag(id);
            let mut tape = Tape::new();
            let forward = model.forward(&mut tape, store, bag, &mut Phase::eval())?;
            let curve = HazardCurve::from_logits(tape.value(forward.logits).row(0))?;
            Ok(RiskRow {
                id: id.clone(),
                risk: curve.risk,
                time: bag.surv_months,
                event: !bag.censored,
            })
        })
        .collect::<Result<_>>()?;
    Ok(RiskTable::new(rows)?)
}

/// Median of the uncensored event times among `ids`; the fixed-horizon
/// AUC evaluates at the training fold's median so no test information
/// leaks into the threshold.
pub fn median_event_time(data: &PreparedData, ids: &[String]) -> Result<f64> {
    let mut times: Vec<f64> = ids
        .iter()
        .map(|id| data.bag(id))
        .filter(|b| !b.censored)
        .map(|b| b.surv_months)
        .collect();
    if times.is_empty() {
        return Err(CliError::Training("no uncensored patients in training fold".into()));
    }
    times.sort_by(f64::total_cmp);
    let n = times.len();
    Ok(if n % 2 == 1 {
        times[n / 2]
    } else {
        0.5 * (times[n / 2 - 1] + times[n / 2])
    })
}

fn checkpoint_path(out_dir: &Path, fold: usize) -> PathBuf {
    out_dir.join(format!("checkpoint_fold{fold}.ckpt"))
}

fn thread_cap(k: usize) -> usize {
    std::env::var("HIMT_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(k)
        .min(k)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| CliError::Path {
        path: path.display().to_string(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| CliError::Path {
        path: path.display().to_string(),
        source,
    })
}

/// Result of `train`: per-fold epoch losses, in fold order.
pub struct TrainOutcome {
    pub fold_losses: Vec<Vec<f64>>,
    pub wall_clock_secs: f64,
}

/// Train every fold (in parallel up to `HIMT_THREADS`), write one
/// checkpoint per fold plus `runlog.txt`.
pub fn run_train(config: &ExperimentConfig, out_dir: &Path) -> Result<TrainOutcome> {
    let started = Instant::now();
    create_dir(out_dir)?;
    let data = prepare(config)?;
    let folds = folds_of(config, &data)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_cap(config.k_folds))
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let trained: Vec<TrainedFold> = pool.install(|| {
        folds
            .par_iter()
            .enumerate()
            .map(|(fold, (train_ids, _))| train_fold(config, &data, fold, train_ids))
            .collect::<Result<Vec<_>>>()
    })?;

    for t in &trained {
        save_checkpoint(&checkpoint_path(out_dir, t.fold), &t.store, Some(&t.bins))?;
    }

    let wall_clock_secs = started.elapsed().as_secs_f64();
    let mut log = String::from("himt-runlog v1\n");
    log.push_str(&format!("config_hash {}\n", config.snapshot_hash()));
    log.push_str(&format!("wall_clock_secs {wall_clock_secs:.3}\n"));
    for t in &trained {
        for (epoch, loss) in t.epoch_losses.iter().enumerate() {
            log.push_str(&format!("fold {} epoch {} mean_loss {}\n", t.fold, epoch, loss));
        }
    }
    write_text(&out_dir.join("runlog.txt"), &log)?;

    Ok(TrainOutcome {
        fold_losses: trained.into_iter().map(|t| t.epoch_losses).collect(),
        wall_clock_secs,
    })
}

/// Rebuild the fold's model and load its checkpoint.
pub fn load_fold_model(
    config: &ExperimentConfig,
    data: &PreparedData,
    out_dir: &Path,
    fold: usize,
) -> Result<(HimtModel, ParamStore, Option<TimeBins>)> {
    let (model, mut store) = init_fold_model(config, data, fold)?;
    let checkpoint = load_checkpoint(&checkpoint_path(out_dir, fold))?;
    apply_checkpoint(&mut store, &checkpoint)?;
    Ok((model, store, checkpoint.bins))
}

/// Result of `eval`.
#[derive(Debug)]
pub struct EvalOutcome {
    pub reports: Vec<FoldReport>,
    pub c_index: MetricSummary,
    pub auc: MetricSummary,
}

/// Score every test fold under its frozen checkpoint and write
/// `folds.csv` and `summary.csv`.
pub fn run_eval(config: &ExperimentConfig, out_dir: &Path) -> Result<EvalOutcome> {
    let data = prepare(config)?;
    let folds = folds_of(config, &data)?;
    let mut reports = Vec::with_capacity(folds.len());
    for (fold, (train_ids, test_ids)) in folds.iter().enumerate() {
        let (model, store, _) = load_fold_model(config, &data, out_dir, fold)?;
        let table = risk_table(&data, test_ids, &model, &store)?;
        let horizon = median_event_time(&data, train_ids)?;
        let (c, n_pairs) = c_index(&table)?;
        let auc_value = himt_core::auc(&table, horizon)?;
        reports.push(FoldReport {
            fold,
            c_index: c,
            auc: auc_value,
            n_pairs,
        });
    }
    write_fold_reports(out_dir, &reports)?;
    let (c_summary, auc_summary) = summarize(&reports);
    Ok(EvalOutcome {
        reports,
        c_index: c_summary,
        auc: auc_summary,
    })
}

fn write_fold_reports(out_dir: &Path, reports: &[FoldReport]) -> Result<()> {
    let mut folds_csv = String::from("fold,c_index,auc,n_pairs\n");
    for r in reports {
        folds_csv.push_str(&format!("{},{},{},{}\n", r.fold, r.c_index, r.auc, r.n_pairs));
    }
    write_text(&out_dir.join("folds.csv"), &folds_csv)?;

    let (c, a) = summarize(reports);
    let mut summary_csv = String::from("metric,mean,std\n");
    summary_csv.push_str(&format!("c_index,{},{}\n", c.mean, c.std));
    summary_csv.push_str(&format!("auc,{},{}\n", a.mean, a.std));
    write_text(&out_dir.join("summary.csv"), &summary_csv)
}

/// Write each test patient's co-attention matrix (N x M, genes by
/// instances) as headerless CSV under `out_dir/attention/`. Returns the
/// number of files written. Rendering is up to external tooling.
pub fn export_attention(config: &ExperimentConfig, out_dir: &Path) -> Result<usize> {
    let data = prepare(config)?;
    let folds = folds_of(config, &data)?;
    let attention_dir = out_dir.join("attention");
    create_dir(&attention_dir)?;
    let mut written = 0;
    for (fold, (_, test_ids)) in folds.iter().enumerate() {
        let (model, store, _) = load_fold_model(config, &data, out_dir, fold)?;
        for id in test_ids {
            let bag = data.bag(id);
            let mut tape = Tape::new();
            let forward = model.forward(&mut tape, &store, bag, &mut Phase::eval())?;
            let path = attention_dir.join(format!("{id}.csv"));
            himt_core::data::write_matrix_csv(&path, tape.value(forward.gca.a_coa))?;
            written += 1;
        }
    }
    Ok(written)
}

/// Result of `synth`.
pub struct SynthOutcome {
    /// C-index of the planted risk on the uncensored subset.
    pub sanity_c_index: f64,
    pub patients: usize,
}

/// Generate a synthetic dataset into `out_dir` and report how well the
/// planted risk ranks the uncensored patients.
pub fn run_synth(config: &ExperimentConfig, out_dir: &Path) -> Result<SynthOutcome> {
    let synth_config = config.synth_config();
    let dataset = himt_core::synth_generate(&synth_config, config.seed)?;
    himt_core::write_dataset(&dataset, out_dir)?;

    let rows: Vec<RiskRow> = dataset
        .records
        .iter()
        .zip(&dataset.true_risks)
        .filter(|(r, _)| !r.censored)
        .map(|(r, &risk)| RiskRow {
            id: r.patient_id.clone(),
            risk,
            time: r.surv_months,
            event: true,
        })
        .collect();
    let (sanity, _) = c_index(&RiskTable::new(rows)?)?;
    Ok(SynthOutcome {
        sanity_c_index: sanity,
        patients: dataset.records.len(),
    })
}

/// One row of the magnification ablation table.
pub struct AblationRow {
    pub setting: String,
    pub mean_bag_size: f64,
    pub c_index: MetricSummary,
    pub auc: MetricSummary,
}

/// The five level-subset settings of the magnification ablation.
pub fn ablation_settings() -> Vec<Vec<himt_core::Magnification>> {
    use himt_core::Magnification::{X10, X20, X5};
    vec![
        vec![X5],
        vec![X10],
        vec![X20],
        vec![X20, X10],
        vec![X20, X10, X5],
    ]
}

/// Train and evaluate each magnification subset end-to-end on the same
/// dataset; write `ablation.csv` plus one run subdirectory per setting.
pub fn run_ablation(config: &ExperimentConfig, out_dir: &Path) -> Result<Vec<AblationRow>> {
    create_dir(out_dir)?;
    let mut rows = Vec::new();
    for levels in ablation_settings() {
        let setting: Vec<&str> = levels.iter().map(|m| m.token()).collect();
        let setting = setting.join(",");
        let mut sub_config = config.clone();
        sub_config.levels = levels;
        let sub_dir = out_dir.join(format!("ablate_{}", setting.replace(',', "_")));
        create_dir(&sub_dir)?;

        run_train(&sub_config, &sub_dir)?;
        let outcome = run_eval(&sub_config, &sub_dir)?;

        let data = prepare(&sub_config)?;
        let mean_bag_size = data.bags.iter().map(|b| b.n_instances() as f64).sum::<f64>()
            / data.bags.len() as f64;
        rows.push(AblationRow {
            setting,
            mean_bag_size,
            c_index: outcome.c_index,
            auc: outcome.auc,
        });
    }

    let mut csv = String::from("setting,mean_bag_size,c_index_mean,c_index_std,auc_mean,auc_std\n");
    for r in &rows {
        csv.push_str(&format!(
            "\"{}\",{},{},{},{},{}\n",
            r.setting, r.mean_bag_size, r.c_index.mean, r.c_index.std, r.auc.mean, r.auc.std
        ));
    }
    write_text(&out_dir.join("ablation.csv"), &csv)?;
    Ok(rows)
}
