//! Error categories shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument or dimension mismatch.
    #[error("parameter error: {0}")]
    Parameter(String),
    /// A computation produced non-finite or otherwise unusable values.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Random graph generation exhausted its retry budget.
    #[error("graph generation failed: {0}")]
    Generation(String),
    /// Malformed configuration file or unknown key.
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI, one per category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter(_) => 2,
            Error::Numeric(_) => 3,
            Error::Generation(_) => 4,
            Error::Config(_) => 5,
            Error::Io(_) => 6,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
