use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape, range, finiteness).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration; the field name is carried for reporting.
    #[error("invalid configuration `{field}`: {message}")]
    Config { field: String, message: String },

    /// A gradient or loss became non-finite.
    #[error("training diverged at gradient step {step}: {message}")]
    Divergence { step: u64, message: String },

    #[error("cannot sample from an empty replay buffer")]
    EmptyBuffer,

    #[error("malformed binary data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn contract(message: impl Into<String>) -> Self {
        Error::Contract(message.into())
    }
}
