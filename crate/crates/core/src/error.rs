use thiserror::Error;

/// Errors produced by any part of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A filter returned an index outside the unexamined set; the FDR
    /// guarantee hinges on the access contract, so this is fatal.
    #[error("filter contract violation: returned index {index} ({reason})")]
    FilterContract { index: usize, reason: &'static str },

    #[error("covariance numerically singular (min eigenvalue {0:.3e})")]
    SingularCovariance(f64),

    #[error("factorization failed (offending eigenvalue {0:.3e})")]
    Factorization(f64),

    #[error("design matrix is rank-deficient")]
    RankDeficient,

    #[error("p-values unavailable: need n > p + 1 (n = {n}, p = {p})")]
    PValuesUnavailable { n: usize, p: usize },

    #[error("solver did not converge: {0}")]
    NoConvergence(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
