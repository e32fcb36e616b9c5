use thiserror::Error;

/// Errors produced by kernel evaluation, solver, diagnostic, and task
/// construction operations.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violated a documented precondition
    /// (dimension mismatch, nonpositive parameter, malformed document).
    #[error("invalid input: {0}")]
    Input(String),

    /// A computation left the numerically trustworthy regime: a consistency
    /// tolerance was exceeded, a factorization failed, or a spectrum fell
    /// outside its admissible range.
    #[error("numerical failure: {0}")]
    Numerics(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn numerics(msg: impl Into<String>) -> Self {
        Error::Numerics(msg.into())
    }
}
