//! Error taxonomy shared across the crate.
//!
//! The CLI maps these onto process exit codes: usage/config problems exit 1,
//! data problems exit 2, numeric failures exit 3.

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration or API misuse (bad hyperparameter, non-scalar
    /// loss passed to backward, feature mode without its required losses).
    #[error("config error: {0}")]
    Config(String),

    /// Tensor shape/dimension mismatch.
    #[error("dimension error: {0}")]
    Dim(String),

    /// Malformed or out-of-range input data (bad dataset line, unknown label,
    /// token id outside the vocabulary, empty sentence).
    #[error("data error: {0}")]
    Data(String),

    /// An operation produced a non-finite value, or training diverged.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A checkpoint failed its consistency checks on load.
    #[error("checkpoint corruption: {0}")]
    Corrupt(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Dim(_) => 1,
            Error::Data(_) | Error::Corrupt(_) | Error::Io(_) => 2,
            Error::Numeric(_) => 3,
        }
    }
}
