//! Concordance index, fixed-horizon AUC, k-fold splitting, and fold
//! aggregation.

use crate::error::{CoreError, Result};
use rand::seq::SliceRandom;
use crate::rng;

/// One scored patient.
#[derive(Clone, Debug)]
pub struct RiskRow {
    pub id: String,
    pub risk: f64,
    pub time: f64,
    /// True when the event (death) was observed, i.e. the patient is
    /// uncensored.
    pub event: bool,
}

/// Scored cohort with unique ids and positive observation times.
#[derive(Clone, Debug, Default)]
pub struct RiskTable {
    rows: Vec<RiskRow>,
}

impl RiskTable {
    pub fn new(rows: Vec<RiskRow>) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if r.time <= 0.0 || !r.time.is_finite() {
                return Err(CoreError::Contract(format!(
                    "row {i} ({}) has non-positive time {}",
                    r.id, r.time
                )));
            }
        }
        let mut ids: Vec<&str> = rows.iter().map(|r| r.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(CoreError::Contract("duplicate patient id in risk table".into()));
        }
        Ok(RiskTable { rows })
    }

    pub fn rows(&self) -> &[RiskRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Harrell-style concordance index over ordered pairs anchored at
/// uncensored patients.
///
/// A pair (i, j) is comparable when patient i had the event and patient j's
/// observed time is strictly larger. Each comparable pair scores 1 when
/// `risk_i > risk_j`, 0.5 on a risk tie, and 0 otherwise. Returns the score
/// mean and the number of comparable pairs.
pub fn c_index(table: &RiskTable) -> Result<(f64, usize)> {
    let rows = table.rows();
    let mut n_pairs = 0usize;
    let mut score = 0.0f64;
    for i in rows.iter().filter(|r| r.event) {
        for j in rows.iter() {
            if j.time > i.time {
                n_pairs += 1;
                if i.risk > j.risk {
                    score += 1.0;
                } else if i.risk == j.risk {
                    score += 0.5;
                }
            }
        }
    }
    if n_pairs == 0 {
        return Err(CoreError::Metric(
            "concordance index undefined: no comparable pairs".into(),
        ));
    }
    Ok((score / n_pairs as f64, n_pairs))
}

/// Fixed-horizon binary AUC of risk scores.
///
/// Positives had their event by the horizon; patients observed beyond the
/// horizon are negatives; patients censored strictly before the horizon
/// are indeterminable and excluded. Computed by rank-sum with average
/// ranks on ties.
pub fn auc(table: &RiskTable, horizon: f64) -> Result<f64> {
    if horizon <= 0.0 || !horizon.is_finite() {
        return Err(CoreError::Contract(format!("horizon must be positive, got {horizon}")));
    }
    let mut labeled: Vec<(f64, bool)> = Vec::new();
    for r in table.rows() {
        if r.time > horizon {
            labeled.push((r.risk, false));
        } else if r.event {
            labeled.push((r.risk, true));
        } else if r.time == horizon {
            // Censored exactly at the horizon: known alive at the horizon.
            labeled.push((r.risk, false));
        }
    }
    let n_pos = labeled.iter().filter(|(_, pos)| *pos).count();
    let n_neg = labeled.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(CoreError::Metric(format!(
            "auc undefined at horizon {horizon}: {n_pos} positives, {n_neg} negatives"
        )));
    }

    labeled.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite risks"));
    // Average ranks across tied risk values (1-based ranks).
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < labeled.len() {
        let mut j = i;
        while j < labeled.len() && labeled[j].0 == labeled[i].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for item in &labeled[i..j] {
            if item.1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Shuffle ids once, then deal k folds whose sizes differ by at most one.
/// Returns `(train, test)` id lists per fold; every id lands in exactly one
/// test fold.
pub fn kfold_split(ids: &[String], k: usize, seed: u64) -> Result<Vec<(Vec<String>, Vec<String>)>> {
    if k < 2 {
        return Err(CoreError::Contract(format!("k must be at least 2, got {k}")));
    }
    if ids.len() < k {
        return Err(CoreError::Contract(format!(
            "cannot split {} ids into {} folds",
            ids.len(),
            k
        )));
    }
    let mut shuffled = ids.to_vec();
    let mut rng = rng::stream(seed, "folds");
    shuffled.shuffle(&mut rng);

    let base = shuffled.len() / k;
    let extra = shuffled.len() % k;
    let mut folds: Vec<Vec<String>> = Vec::with_capacity(k);
    let mut cursor = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(shuffled[cursor..cursor + size].to_vec());
        cursor += size;
    }

    Ok((0..k)
        .map(|f| {
            let test = folds[f].clone();
            let train = folds
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != f)
                .flat_map(|(_, fold)| fold.iter().cloned())
                .collect();
            (train, test)
        })
        .collect())
}

/// Metrics for one cross-validation fold.
#[derive(Clone, Debug)]
pub struct FoldReport {
    pub fold: usize,
    pub c_index: f64,
    pub auc: f64,
    pub n_pairs: usize,
}

/// Mean and sample standard deviation of one metric across folds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(values: &[f64]) -> MetricSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        var.sqrt()
    };
    MetricSummary { mean, std }
}

/// Aggregate fold reports into per-metric mean and sample std.
pub fn summarize(reports: &[FoldReport]) -> (MetricSummary, MetricSummary) {
    let c: Vec<f64> = reports.iter().map(|r| r.c_index).collect();
    let a: Vec<f64> = reports.iter().map(|r| r.auc).collect();
    (mean_std(&c), mean_std(&a))
}
