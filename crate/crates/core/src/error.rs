use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Malformed cell. `row` is 1-based over data rows (header excluded).
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("column '{0}' is constant and cannot be rescaled")]
    ConstantColumn(String),

    #[error("shape mismatch: expected {expected} features, found {found}")]
    Shape { expected: usize, found: usize },

    #[error("information matrix is singular; no information on column '{column}'")]
    Singular { column: String },

    #[error("Newton-Raphson did not converge after {iterations} iterations (last beta = {beta:?})")]
    NonConvergence { iterations: usize, beta: Vec<f64> },

    #[error("subgroup split error: {0}")]
    Split(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("too many features for exhaustive enumeration: {p} > {max}")]
    Capacity { p: usize, max: usize },

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    /// True for failures of a numerical procedure, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. }
                | Error::NonConvergence { .. }
                | Error::Training(_)
                | Error::UndefinedMetric(_)
                | Error::Internal(_)
        )
    }
}
