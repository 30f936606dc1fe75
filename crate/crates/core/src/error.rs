use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("compatibility violated: sources sum to {sum:e}, expected 0")]
    Compatibility { sum: f64 },

    #[error("stability limit exceeded at step {step}: courant number {courant} > {limit}")]
    Stability {
        step: usize,
        courant: f64,
        limit: f64,
    },

    #[error("linear solver failed: {0}")]
    Solver(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("training diverged at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize },

    #[error("similarity undefined for an all-zero stencil")]
    UndefinedSimilarity,

    #[error("probe invalid: {0}")]
    ProbeInvalid(String),

    #[error("model not converged: {0}")]
    NotConverged(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
