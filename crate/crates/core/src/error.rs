//! Error type shared by the library.
//!
//! Construction and configuration problems are reported through [`Error`];
//! shape mismatches inside numerical kernels panic (they are programming
//! errors, not runtime conditions), and solver non-convergence is reported
//! through status flags on the result types, never as an `Err`.

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A parameter violates its documented precondition.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
