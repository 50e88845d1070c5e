use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed model document or partition string.
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error(
        "reaction {reaction}: factor {factor} on species {species:?} is split by the leaf boundary {leaves}"
    )]
    Factorization {
        reaction: usize,
        factor: usize,
        species: Vec<usize>,
        leaves: String,
    },

    #[error("index out of bounds: {0}")]
    OutOfBounds(String),

    #[error("dense size {requested} exceeds the guard of {limit} entries")]
    GuardExceeded { requested: u128, limit: u128 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("zero-norm leaf distribution at leaf {0}")]
    ZeroNorm(usize),

    #[error("GMRES did not converge after {iterations} iterations (relative residual {residual:e})")]
    KrylovNonConvergence { iterations: usize, residual: f64 },

    #[error("non-finite values after {stage} at node path {path:?}, step {step}")]
    NonFinite {
        stage: &'static str,
        path: Vec<usize>,
        step: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("snapshot format: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Numerical failures (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::KrylovNonConvergence { .. } | Error::NonFinite { .. }
        )
    }
}
