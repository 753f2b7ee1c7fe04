use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("mesh invariant violated: {0}")]
    MeshInvariant(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("field length {got} does not match carrier size {expected}")]
    MeshMismatch { expected: usize, got: usize },

    #[error("coefficient field must be strictly positive (found {0})")]
    NonPositiveCoefficient(f64),

    #[error("conjugate gradient did not converge in {iterations} iterations (relative residual {residual:.3e})")]
    SolverNotConverged { iterations: usize, residual: f64 },

    #[error("sparse factorization failed: {0}")]
    Factorization(String),

    #[error("point ({0}) lies outside the field domain")]
    OutsideDomain(String),

    #[error("{0}")]
    Config(String),

    #[error("missing input file {0}")]
    MissingInput(PathBuf),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
