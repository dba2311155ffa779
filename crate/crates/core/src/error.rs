use thiserror::Error;

/// Errors produced by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input: shape mismatches, invalid parameters, bad files.
    #[error("validation error: {0}")]
    Validation(String),

    /// Input data carries no usable signal (e.g. all pairwise distances zero).
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// A numerical routine produced non-finite or inconsistent results.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Every candidate of a tuning grid produced a non-finite criterion.
    #[error("tuning error: {0}")]
    Tuning(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn degenerate(msg: impl Into<String>) -> Self {
        Error::DegenerateData(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn tuning(msg: impl Into<String>) -> Self {
        Error::Tuning(msg.into())
    }

    pub fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }

    /// Process exit code for the CLI: 2 for bad inputs, 3 for numerical trouble.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Io(_) | Error::Parse(_) => 2,
            Error::DegenerateData(_) | Error::Numerical(_) | Error::Tuning(_) => 3,
        }
    }

    /// Prefix the message with pair or subject context.
    pub fn with_context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            Error::Validation(m) => Error::Validation(format!("{ctx}: {m}")),
            Error::DegenerateData(m) => Error::DegenerateData(format!("{ctx}: {m}")),
            Error::Numerical(m) => Error::Numerical(format!("{ctx}: {m}")),
            Error::Tuning(m) => Error::Tuning(format!("{ctx}: {m}")),
            Error::Parse(m) => Error::Parse(format!("{ctx}: {m}")),
            e @ Error::Io(_) => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
