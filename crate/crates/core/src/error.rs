use thiserror::Error;

use crate::solver::SolveStats;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("expression error at column {column}: {message}")]
    Expression { column: usize, message: String },

    #[error("coefficient not elliptic: min sampled value {min} is not positive")]
    NotElliptic { min: f64 },

    #[error("potential does not have zero mean over the cell: residual {residual:e} exceeds {tol:e}")]
    NonZeroMean { residual: f64, tol: f64 },

    #[error("test function is not centred: cell mean {mean:e} exceeds {tol:e}")]
    NotCentred { mean: f64, tol: f64 },

    #[error("epsilon {eps} is not resolved: {message}")]
    Unresolved { eps: f64, message: String },

    #[error("singular matrix at pivot {0}")]
    Singular(usize),

    #[error("linear solve failed: backward error {residual:e} above {tol:e}")]
    LinearSolve { residual: f64, tol: f64 },

    #[error("nonlinear solve did not converge: {stats}")]
    NotConverged { best: Vec<f64>, stats: Box<SolveStats> },

    #[error("cell problem failed at macro point {location:?}: {source}")]
    CellFailure {
        location: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("outer iteration stagnated after {iterations} iterations (residual {residual:e})")]
    Stagnation { iterations: usize, residual: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
