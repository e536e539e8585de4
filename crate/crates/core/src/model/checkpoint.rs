//! Plain-text model checkpoints.
//!
//! Layout:
//! ```text
//! himt-checkpoint v1
//! bins <cut> <cut> ...          # optional, fitted time-bin cut-points
//! param <name> <rows> <cols>
//! <row of space-separated values>
//! ...
//! ```
//! Floats use Rust's shortest round-trip formatting, so a save/load cycle
//! reproduces values bit-exactly and identical training runs produce
//! byte-identical files.

use crate::error::{CoreError, Result};
use crate::matrix::Matrix;
use crate::param::ParamStore;
use crate::survival::TimeBins;
use std::fs;
use std::path::Path;

const HEADER: &str = "himt-checkpoint v1";

/// Write every parameter (in store order) plus optional fitted bins.
pub fn save_checkpoint(path: &Path, store: &ParamStore, bins: Option<&TimeBins>) -> Result<()> {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    if let Some(bins) = bins {
        out.push_str("bins");
        for c in bins.cuts() {
            out.push(' ');
            out.push_str(&c.to_string());
        }
        out.push('\n');
    }
    for p in store.iter() {
        out.push_str(&format!("param {} {} {}\n", p.name, p.value.rows(), p.value.cols()));
        for r in 0..p.value.rows() {
            let row: Vec<String> = p.value.row(r).iter().map(|v| v.to_string()).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    fs::write(path, out).map_err(|source| CoreError::Path {
        path: path.display().to_string(),
        source,
    })
}

/// Parsed checkpoint contents.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub params: Vec<(String, Matrix)>,
    pub bins: Option<TimeBins>,
}

/// Read a checkpoint file.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|source| CoreError::Path {
        path: path.display().to_string(),
        source,
    })?;
    let fmt = |line: usize, message: String| CoreError::Format {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, line)) if line == HEADER => {}
        other => {
            return Err(fmt(1, format!("expected header '{HEADER}', got {other:?}")));
        }
    }

    let mut params = Vec::new();
    let mut bins = None;
    while let Some((idx, line)) = lines.next() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("bins ") {
            let cuts: Vec<f64> = rest
                .split_whitespace()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| fmt(line_no, format!("invalid bin cut '{f}'")))
                })
                .collect::<Result<_>>()?;
            bins = Some(TimeBins::from_cuts(cuts)?);
            continue;
        }
        let Some(rest) = line.strip_prefix("param ") else {
            return Err(fmt(line_no, format!("expected 'param' line, got '{line}'")));
        };
        let fields: Vec<&str> = rest.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(fmt(line_no, "param line needs: name rows cols".into()));
        }
        let name = fields[0].to_string();
        let rows: usize = fields[1]
            .parse()
            .map_err(|_| fmt(line_no, format!("invalid row count '{}'", fields[1])))?;
        let cols: usize = fields[2]
            .parse()
            .map_err(|_| fmt(line_no, format!("invalid col count '{}'", fields[2])))?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let Some((ridx, row_line)) = lines.next() else {
                return Err(fmt(line_no, format!("unexpected end of file inside '{name}'")));
            };
            for f in row_line.split_whitespace() {
                data.push(
                    f.parse::<f64>()
                        .map_err(|_| fmt(ridx + 1, format!("invalid value '{f}'")))?,
                );
            }
        }
        if data.len() != rows * cols {
            return Err(fmt(line_no, format!("parameter '{name}' has {} values, expected {}", data.len(), rows * cols)));
        }
        params.push((name, Matrix::from_vec(rows, cols, data)?));
    }
    Ok(Checkpoint { params, bins })
}

/// Overwrite store values with checkpoint contents, matching by name.
/// Every store parameter must be present with the right shape.
pub fn apply_checkpoint(store: &mut ParamStore, checkpoint: &Checkpoint) -> Result<()> {
    for id in store.ids().collect::<Vec<_>>() {
        let name = store.get(id).name.clone();
        let Some((_, value)) = checkpoint.params.iter().find(|(n, _)| *n == name) else {
            return Err(CoreError::Contract(format!("checkpoint is missing parameter '{name}'")));
        };
        if value.shape() != store.value(id).shape() {
            return Err(CoreError::shape("apply_checkpoint", store.value(id).shape(), value.shape()));
        }
        store.get_mut(id).value = value.clone();
    }
    Ok(())
}
