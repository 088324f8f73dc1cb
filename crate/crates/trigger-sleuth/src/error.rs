use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violates an operation precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Vector/matrix shapes do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An indicator is all-zero or all-one where `h(v)` needs both parts
    /// nonempty.
    #[error("degenerate indicator: support size {support} with length {n}")]
    DegenerateIndicator { support: usize, n: usize },

    /// A combinatorial guard was exceeded (e.g. exact enumeration budget).
    #[error("combinatorial budget exceeded: {0}")]
    BudgetExceeded(String),

    /// A file did not parse as the expected format.
    #[error("data format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
