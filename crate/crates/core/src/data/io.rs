//! Readers and writers for the on-disk dataset layout.
//!
//! A dataset directory holds:
//! - `labels.csv` - lines `patient-id,surv_months,censor` (censor 1 = censored)
//! - `signature.tsv` - lines `SYMBOL<TAB>category-index`
//! - `<id>_<mag>.csv` - headerless patch features, one patch per line,
//!   `d_in` comma-separated floats, mag in {5x, 10x, 20x}
//! - `<id>_genes.csv` - lines `SYMBOL,value`

use super::{GeneSignature, Magnification, PatchFeatureSet, PatientRecord};
use crate::error::{CoreError, Result};
use crate::matrix::Matrix;
use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CoreError::Path {
        path: path.display().to_string(),
        source,
    })
}

fn format_err(path: &Path, line: usize, message: impl Into<String>) -> CoreError {
    CoreError::Format {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn parse_float(path: &Path, line: usize, field: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| format_err(path, line, format!("invalid float '{field}'")))
}

/// One `labels.csv` row.
#[derive(Clone, Debug)]
pub struct LabelRow {
    pub patient_id: String,
    pub surv_months: f64,
    pub censored: bool,
}

/// Parse `labels.csv`.
pub fn load_labels(path: &Path) -> Result<Vec<LabelRow>> {
    let text = read_to_string(path)?;
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(format_err(path, line_no, format!("expected 3 fields, got {}", fields.len())));
        }
        let patient_id = fields[0].trim().to_string();
        if patient_id.is_empty() {
            return Err(format_err(path, line_no, "empty patient id"));
        }
        if !seen.insert(patient_id.clone()) {
            return Err(format_err(path, line_no, format!("duplicate patient id '{patient_id}'")));
        }
        let surv_months = parse_float(path, line_no, fields[1])?;
        if surv_months <= 0.0 || !surv_months.is_finite() {
            return Err(format_err(path, line_no, format!("survival time must be positive, got {surv_months}")));
        }
        let censored = match fields[2].trim() {
            "0" => false,
            "1" => true,
            other => return Err(format_err(path, line_no, format!("censor flag must be 0 or 1, got '{other}'"))),
        };
        rows.push(LabelRow {
            patient_id,
            surv_months,
            censored,
        });
    }
    if rows.is_empty() {
        return Err(format_err(path, 0, "labels file holds no rows"));
    }
    Ok(rows)
}

/// Parse `signature.tsv`.
pub fn load_signature(path: &Path) -> Result<GeneSignature> {
    let text = read_to_string(path)?;
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(format_err(path, line_no, format!("expected SYMBOL<TAB>index, got {} fields", fields.len())));
        }
        let symbol = fields[0].trim().to_string();
        if !seen.insert(symbol.clone()) {
            return Err(format_err(path, line_no, format!("duplicate symbol '{symbol}'")));
        }
        let category: usize = fields[1]
            .trim()
            .parse()
            .map_err(|_| format_err(path, line_no, format!("invalid category index '{}'", fields[1])))?;
        entries.push((symbol, category));
    }
    if entries.is_empty() {
        return Err(format_err(path, 0, "signature file holds no entries"));
    }
    GeneSignature::new(entries)
}

fn load_feature_file(path: &Path, magnification: Magnification) -> Result<PatchFeatureSet> {
    let text = read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|f| parse_float(path, line_no, f))
            .collect::<Result<_>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(format_err(path, line_no, format!("row has {} values, expected {}", row.len(), w)));
            }
            _ => {}
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(format_err(path, 0, "feature file holds no rows"));
    }
    Ok(PatchFeatureSet {
        magnification,
        features: Matrix::from_rows(&rows)?,
    })
}

/// Recognized `(symbol, value)` pairs plus the dropped unknown symbols.
type GeneFileContents = (Vec<(String, f64)>, Vec<String>);

fn load_gene_file(path: &Path, signature: &GeneSignature) -> Result<GeneFileContents> {
    let text = read_to_string(path)?;
    let mut genes = Vec::new();
    let mut unknown = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 {
            return Err(format_err(path, line_no, format!("expected SYMBOL,value, got {} fields", fields.len())));
        }
        let symbol = fields[0].trim().to_string();
        if !seen.insert(symbol.clone()) {
            return Err(format_err(path, line_no, format!("duplicate gene symbol '{symbol}'")));
        }
        let value = parse_float(path, line_no, fields[1])?;
        if signature.category_of(&symbol).is_some() {
            genes.push((symbol, value));
        } else {
            unknown.push(symbol);
        }
    }
    Ok((genes, unknown))
}

/// A loaded patient plus any gene symbols dropped because the signature
/// does not know them.
#[derive(Clone, Debug)]
pub struct LoadedPatient {
    pub record: PatientRecord,
    pub unknown_genes: Vec<String>,
    /// Levels requested but absent on disk.
    pub missing_levels: Vec<Magnification>,
}

/// Load one patient's feature and gene files from `dir`.
///
/// Requested levels whose files are missing are skipped and recorded; at
/// least one level must be present. Feature width must agree across the
/// levels that exist.
pub fn load_patient(
    dir: &Path,
    label: &LabelRow,
    levels: &[Magnification],
    signature: &GeneSignature,
) -> Result<LoadedPatient> {
    let mut feature_sets = Vec::new();
    let mut missing_levels = Vec::new();
    for &mag in levels {
        let path = dir.join(format!("{}_{}.csv", label.patient_id, mag.token()));
        if path.exists() {
            feature_sets.push(load_feature_file(&path, mag)?);
        } else {
            missing_levels.push(mag);
        }
    }
    if feature_sets.is_empty() {
        return Err(CoreError::Contract(format!(
            "patient {} has no feature files for the requested levels",
            label.patient_id
        )));
    }
    let width = feature_sets[0].features.cols();
    for fs in &feature_sets {
        if fs.features.cols() != width {
            return Err(CoreError::Contract(format!(
                "patient {}: level {} has width {}, expected {}",
                label.patient_id,
                fs.magnification,
                fs.features.cols(),
                width
            )));
        }
    }

    let gene_path = dir.join(format!("{}_genes.csv", label.patient_id));
    let (gene_expression, unknown_genes) = load_gene_file(&gene_path, signature)?;

    Ok(LoadedPatient {
        record: PatientRecord {
            patient_id: label.patient_id.clone(),
            surv_months: label.surv_months,
            censored: label.censored,
            feature_sets,
            gene_expression,
        },
        unknown_genes,
        missing_levels,
    })
}

/// A fully loaded dataset directory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub records: Vec<PatientRecord>,
    pub signature: GeneSignature,
    /// Symbols dropped across all patients, deduplicated.
    pub unknown_genes: Vec<String>,
}

impl Dataset {
    pub fn ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.patient_id.clone()).collect()
    }

    pub fn record(&self, id: &str) -> Option<&PatientRecord> {
        self.records.iter().find(|r| r.patient_id == id)
    }
}

/// Load `labels.csv`, `signature.tsv`, and every patient under `dir`.
pub fn load_dataset(dir: &Path, levels: &[Magnification]) -> Result<Dataset> {
    let labels = load_labels(&dir.join("labels.csv"))?;
    let signature = load_signature(&dir.join("signature.tsv"))?;
    let mut records = Vec::with_capacity(labels.len());
    let mut unknown = HashSet::new();
    for label in &labels {
        let loaded = load_patient(dir, label, levels, &signature)?;
        unknown.extend(loaded.unknown_genes);
        records.push(loaded.record);
    }
    let mut unknown_genes: Vec<String> = unknown.into_iter().collect();
    unknown_genes.sort();
    Ok(Dataset {
        records,
        signature,
        unknown_genes,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|source| CoreError::Path {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(contents.as_bytes()).map_err(|source| CoreError::Path {
        path: path.display().to_string(),
        source,
    })
}

/// Write `labels.csv`.
pub fn write_labels(path: &Path, rows: &[LabelRow]) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            r.patient_id,
            r.surv_months,
            u8::from(r.censored)
        ));
    }
    write_file(path, &out)
}

/// Write `signature.tsv` in canonical (category, symbol) order.
pub fn write_signature(path: &Path, signature: &GeneSignature) -> Result<()> {
    let mut out = String::new();
    for (symbol, category) in signature.sorted_entries() {
        out.push_str(&format!("{symbol}\t{category}\n"));
    }
    write_file(path, &out)
}

/// Write a matrix as headerless CSV, one row per line.
pub fn write_matrix_csv(path: &Path, m: &Matrix) -> Result<()> {
    let mut out = String::new();
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_file(path, &out)
}

pub(super) fn write_genes_csv(path: &Path, genes: &[(String, f64)]) -> Result<()> {
    let mut out = String::new();
    for (symbol, value) in genes {
        out.push_str(&format!("{symbol},{value}\n"));
    }
    write_file(path, &out)
}
