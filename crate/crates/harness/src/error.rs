use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error(transparent)]
    Core(#[from] super_core::Error),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// 2 for bad configuration or input schema, 3 for training divergence,
    /// 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Schema(_) => 2,
            HarnessError::Core(super_core::Error::Config { .. }) => 2,
            HarnessError::Core(super_core::Error::Divergence { .. }) => 3,
            _ => 1,
        }
    }

    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> HarnessError {
        let context = context.into();
        move |source| HarnessError::Io { context, source }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(HarnessError::Config("x".into()).exit_code(), 2);
        assert_eq!(HarnessError::Schema("x".into()).exit_code(), 2);
        assert_eq!(HarnessError::Core(super_core::Error::config("gamma", "bad")).exit_code(), 2);
        let div = super_core::Error::Divergence {
            step: 3,
            message: "nan".into(),
        };
        assert_eq!(HarnessError::Core(div).exit_code(), 3);
        assert_eq!(HarnessError::Core(super_core::Error::EmptyBuffer).exit_code(), 1);
    }
}
