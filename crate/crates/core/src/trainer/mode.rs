use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::SelectionStrategy;

/// How the learners are wired together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum RunMode {
    /// One network per agent, no communication.
    IndependentDqn,
    /// Independent networks plus selective experience relay.
    Super(SelectionStrategy),
    /// One network shared by every agent, one buffer per agent.
    ParameterSharing,
}

impl RunMode {
    /// The strategy actually applied on the relay channel.
    pub fn relay_strategy(self) -> SelectionStrategy {
        match self {
            RunMode::Super(s) => s,
            _ => SelectionStrategy::None,
        }
    }

    pub fn shares_parameters(self) -> bool {
        self == RunMode::ParameterSharing
    }
}

impl std::fmt::Display for RunMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunMode::IndependentDqn => f.write_str("dqn"),
            RunMode::Super(s) => write!(f, "super:{s}"),
            RunMode::ParameterSharing => f.write_str("parameter_sharing"),
        }
    }
}

/// Accepts `dqn`, `parameter_sharing`, `super` (quantile), `super:<strategy>`
/// and a bare strategy name.
impl std::str::FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        match norm.as_str() {
            "dqn" | "independent_dqn" | "independent" => Ok(RunMode::IndependentDqn),
            "parameter_sharing" | "ps" | "shared" => Ok(RunMode::ParameterSharing),
            "super" => Ok(RunMode::Super(SelectionStrategy::Quantile)),
            _ => {
                let strategy = norm.strip_prefix("super:").unwrap_or(&norm);
                strategy
                    .parse()
                    .map(RunMode::Super)
                    .map_err(|_| Error::config("mode", format!("unknown run mode `{s}`")))
            }
        }
    }
}

impl TryFrom<String> for RunMode {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<RunMode> for String {
    fn from(m: RunMode) -> String {
        m.to_string()
    }
}
