use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("layout error: {0}")]
    Layout(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 1 validation, 2 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape(_)
            | Error::Parse { .. }
            | Error::Layout(_)
            | Error::Config(_)
            | Error::NonFinite(_) => 1,
            Error::Format(_) | Error::State(_) | Error::Io(_) => 2,
        }
    }
}
