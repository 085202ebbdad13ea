use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("kernel matrix factorization failed even with nugget {nugget:e}; increase the nugget or remove duplicate inputs")]
    Factorization { nugget: f64 },

    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error("serialization: {0}")]
    Serialization(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-parseable class, used by the CLI for its error line.
    pub fn class(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "config",
            Error::Dimension { .. } => "dimension",
            Error::Empty(_) => "empty",
            Error::NonFinite(_) => "non_finite",
            Error::Precondition(_) => "precondition",
            Error::Factorization { .. } => "factorization",
            Error::Csv { .. } => "csv",
            Error::Serialization(_) => "serialization",
            Error::Io(_) => "io",
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Precondition(msg()))
    }
}
