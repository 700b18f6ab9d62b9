use nalgebra::DMatrix;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive definite (eigenvalue {min_eigenvalue:e}, largest {max_eigenvalue:e})")]
    NotPositiveDefinite {
        min_eigenvalue: f64,
        max_eigenvalue: f64,
    },

    #[error("matrix is rank deficient: eigenvalue {eigenvalue:e} below {threshold:e}")]
    RankDeficient { eigenvalue: f64, threshold: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
        last_iterate: Box<DMatrix<f64>>,
    },

    #[error("at time index {index}: {source}")]
    AtTime {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerical routines themselves (as opposed to
    /// malformed or invalid input).
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NoConvergence { .. }
            | Error::RankDeficient { .. }
            | Error::ZeroVariance(_) => true,
            Error::AtTime { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}
