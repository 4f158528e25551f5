use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A region precision matrix (or the c = 1 precision) is not positive definite.
    #[error("non-PD region: smallest eigenvalue {min_eigenvalue:e}")]
    NonPositiveDefinite { min_eigenvalue: f64 },

    /// The marginal cannot be normalized: some region carries a non-PD precision.
    #[error("partition function diverges: smallest eigenvalue {min_eigenvalue:e}")]
    Divergent { min_eigenvalue: f64 },

    #[error("columns {i} and {j} are not orthogonal (inner product {inner:e})")]
    NotOrthogonal { i: usize, j: usize, inner: f64 },

    #[error("singular value decomposition failed")]
    SvdFailed,

    #[error("empty data batch")]
    EmptyData,

    #[error("training diverged at epoch {epoch}, update {update}: {detail}")]
    TrainingDiverged {
        epoch: usize,
        update: usize,
        detail: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("config line {line}: {detail}")]
    Config { line: usize, detail: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by the numbers themselves (divergence, loss of
    /// definiteness) rather than by bad input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::NonPositiveDefinite { .. }
                | Error::Divergent { .. }
                | Error::SvdFailed
                | Error::TrainingDiverged { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
