use thiserror::Error;

/// Errors produced while loading data, fitting models or computing diagnostics.
#[derive(Debug, Error)]
pub enum MltaError {
    /// Malformed input. `row` and `col` are 1-based; `col` is 0 when the whole row is at fault.
    #[error("parse error at row {row}, column {col}: {message}")]
    Parse { row: usize, col: usize, message: String },

    #[error("cannot encode label {label:?} in column {column:?}")]
    Encoding { column: String, label: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A component's expected size dropped below one observation.
    #[error("group {group} degenerated (expected size {size:.3})")]
    DegenerateGroup { group: usize, size: f64 },

    #[error("all {n_starts} starts failed")]
    AllStartsFailed { n_starts: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MltaError>;

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(MltaError::Argument(msg.into()))
}
