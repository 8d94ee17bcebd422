//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the factorization library.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside its valid domain (θ ∉ dom(Ψ), κ ≤ 0, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Maximum-likelihood fitting failed (degenerate or unusable sample).
    #[error("fit failed: {0}")]
    Fit(String),

    /// A configuration value is inconsistent or unusable.
    #[error("configuration error: {0}")]
    Config(String),

    /// User or item index outside the matrix dimensions.
    #[error("index out of range: {0}")]
    Index(String),

    /// A response cannot be produced by any count n within the truncation bound.
    #[error("response {y} at ({user}, {item}) is infeasible for every count n <= {truncation}")]
    Truncation {
        user: usize,
        item: usize,
        y: f64,
        truncation: usize,
    },

    /// The fit loop hit a non-finite log-likelihood; carries the offending entry.
    #[error("non-finite log-likelihood ({detail}) at entry ({user}, {item}), y = {y}")]
    NonFinite {
        user: usize,
        item: usize,
        y: f64,
        detail: String,
    },

    /// AUC needs at least one score from each class.
    #[error("AUC undefined: need at least one missing and one non-missing score")]
    UndefinedAuc,

    /// A text input line failed to parse.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// A binary file has the wrong magic, version, or layout.
    #[error("bad file format: {0}")]
    Format(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
