use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// The correlation triple admits no real third loading.
    #[error("correlation matrix is not positive definite (mu3 radicand = {radicand})")]
    NonPositiveSemiDefinite { radicand: f64 },

    #[error("invalid parameters: {constraint}")]
    InvalidParams { constraint: String },

    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),

    /// A weight or accumulator requires dividing by a coefficient that the
    /// model declares identically zero.
    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("unsupported model for {0}")]
    UnsupportedModel(String),

    #[error("numerical blow-up on path {path} at step {step}")]
    NumericalBlowup { path: u64, step: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("invalid bump: {0}")]
    InvalidBump(String),

    /// Run-configuration failure; `key` names the offending config key.
    #[error("config key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("malformed accumulator dump: {0}")]
    Decode(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn params(constraint: impl Into<String>) -> Self {
        Error::InvalidParams { constraint: constraint.into() }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config { key: key.into(), reason: reason.into() }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
