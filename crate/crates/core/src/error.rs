use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),

    #[error("matrix is rank deficient: |r[{index}][{index}]| = {value:e} below tolerance {tolerance:e}")]
    RankDeficient {
        index: usize,
        value: f64,
        tolerance: f64,
    },

    #[error("null-space basis was not materialized (reduced factorization)")]
    MissingNullBasis,

    #[error("invalid sparsity: k = {k} exceeds limit {limit}")]
    InvalidSparsity { k: usize, limit: usize },

    #[error("invalid solver schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("true signal has zero norm")]
    ZeroTruth,

    #[error("logistic fit did not converge after {iterations} iterations (beta0 = {beta0}, beta1 = {beta1})")]
    DidNotConverge {
        iterations: usize,
        beta0: f64,
        beta1: f64,
    },

    #[error("no grid point lies below the transition curve by the requested margin")]
    EmptyEligibleSet,

    #[error("unknown algorithm `{0}`")]
    UnknownAlgorithm(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}
