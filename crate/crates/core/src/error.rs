use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the fitting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("missing column '{0}'")]
    MissingColumn(String),

    #[error("unknown family '{0}'")]
    UnknownFamily(String),

    #[error("link '{link}' is not supported for family '{family}'")]
    UnknownLink { family: String, link: String },

    #[error("malformed term '{0}'")]
    MalformedTerm(String),

    #[error("non-binary event value {value} in column '{column}' (row {row})")]
    NonBinaryEvent { column: String, row: usize, value: f64 },

    #[error("missing covariate value in row {row}, column '{column}'")]
    MissingCovariate { row: usize, column: String },

    #[error("no observations")]
    NoObservations,

    #[error("invalid data: {0}")]
    Data(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("no convergence: {0}")]
    NonConvergence(String),

    #[error("hessian of the hyperparameter posterior is not negative definite at the mode")]
    IndefiniteHessian,

    #[error("archive error: {0}")]
    Archive(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by user input rather than numerics.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::NonConvergence(_)
                | Error::IndefiniteHessian
                | Error::NonFinite(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
