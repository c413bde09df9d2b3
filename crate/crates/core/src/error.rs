use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("capacity exceeded: {what} requires {required} entries")]
    Capacity { what: &'static str, required: u128 },

    #[error("zero normalizer while filtering action {action}, observation {obs}")]
    Filtering { action: usize, obs: usize },

    #[error("window {0} is unreachable under the prior")]
    UnreachableWindow(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end. Each variant maps
    /// to a distinct nonzero value; 2 is reserved for usage errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) => 3,
            Error::Parameter(_) => 4,
            Error::Capacity { .. } => 5,
            Error::Filtering { .. } => 6,
            Error::UnreachableWindow(_) => 7,
            Error::Numeric(_) => 8,
            Error::Io(_) => 9,
            Error::Json(_) => 10,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
