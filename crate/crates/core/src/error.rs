use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Error type shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A record file line could not be decoded. Line numbers are 1-based and
    /// count the optional header line.
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A vector had the wrong length for the set it belongs to.
    #[error("dimension mismatch{}: expected {expected}, got {got}", context_suffix(context))]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    /// NaN or infinity where a finite value is required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Two tables that must describe the same records do not.
    #[error("id mismatch: {0}")]
    IdMismatch(String),

    /// No threshold satisfies the requested risk constraint.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// A numeric degeneracy (e.g. identical-error estimators).
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn context_suffix(context: &str) -> String {
    if context.is_empty() {
        String::new()
    } else {
        format!(" in {context}")
    }
}

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            got,
        }
    }
}
