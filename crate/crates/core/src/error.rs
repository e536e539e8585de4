//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, CoreError>;

/// Errors raised by matrix arithmetic, graph construction, data loading,
/// survival math, and metric computation.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Operand shapes are incompatible for the named operation.
    #[error("shape mismatch in {op}: left is {lhs_rows}x{lhs_cols}, right is {rhs_rows}x{rhs_cols}")]
    Shape {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },

    /// A NaN or infinity reached an operation that requires finite input.
    #[error("non-finite value encountered in {op}")]
    NonFinite { op: &'static str },

    /// A caller violated an operation precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Two baseline evaluations of a supposedly pure forward pass disagreed.
    #[error("non-deterministic forward pass: baseline losses {first} and {second} differ")]
    NonDeterministic { first: f64, second: f64 },

    /// Time-bin fitting failed (too few events or degenerate quantiles).
    #[error("time-bin fit failed: {0}")]
    BinFit(String),

    /// A metric is undefined on the given inputs.
    #[error("metric undefined: {0}")]
    Metric(String),

    /// A data file violated its format.
    #[error("format error in {path} line {line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },

    /// A required file or directory is missing or unreadable.
    #[error("path error for {path}: {source}")]
    Path {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CoreError {
    pub(crate) fn shape(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Self {
        CoreError::Shape {
            op,
            lhs_rows: lhs.0,
            lhs_cols: lhs.1,
            rhs_rows: rhs.0,
            rhs_cols: rhs.1,
        }
    }

    /// Short machine-parseable class label, used by the CLI exit path.
    pub fn class(&self) -> &'static str {
        match self {
            CoreError::Shape { .. } => "shape",
            CoreError::NonFinite { .. } => "numeric",
            CoreError::Contract(_) => "contract",
            CoreError::NonDeterministic { .. } => "determinism",
            CoreError::BinFit(_) => "fit",
            CoreError::Metric(_) => "metric",
            CoreError::Format { .. } => "format",
            CoreError::Path { .. } => "path",
        }
    }
}
