//! Crate-wide error type and result alias.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// Tensor shapes do not line up for an operation.
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// Invalid configuration value or misuse of the command line.
    #[error("config error: {0}")]
    Config(String),

    /// A data file could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A record or argument violates a structural invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// Training diverged or hit a non-finite value.
    #[error("training error: {0}")]
    Train(String),

    /// Evaluation could not be carried out on the given inputs.
    #[error("evaluation error: {0}")]
    Eval(String),

    /// Checkpoint file is malformed or does not match expectations.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 for usage/config problems,
    /// 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
