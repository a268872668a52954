use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    /// Every candidate direction collapsed numerically, even after random refills.
    #[error("search space collapsed: no linearly independent direction could be generated")]
    BasisCollapse,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("matrix has no rows or no columns")]
    EmptyMatrix,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("unsupported Matrix Market format: {0}")]
    Unsupported(String),

    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("refined extraction state is stale: factored shift {factored} differs from active shift {active}")]
    StaleFactorization { factored: f64, active: f64 },
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            found,
        }
    }
}
