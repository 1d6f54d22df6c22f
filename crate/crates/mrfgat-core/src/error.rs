//! Error type shared across the crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by tensor ops, geometry, data ingestion, and training.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two shapes that must agree do not.
    #[error("dimension mismatch in {context}: {lhs:?} vs {rhs:?}")]
    Dim {
        context: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    Invalid(String),

    /// An internal contract was violated (caller bug, not bad data).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input is degenerate for the requested operation.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Text input could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A binary file is corrupt, truncated, or has an unsupported version.
    #[error("bad file: {0}")]
    Format(String),

    /// Training hit a non-finite loss; carries a diagnostic dump.
    #[error("non-finite loss: {0}")]
    NonFinite(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(context: impl Into<String>, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dim {
            context: context.into(),
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
