//! Domain vocabulary shared by every module: transitions, game shape and
//! the learner configuration records.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type AgentId = usize;

/// One transition observed by one agent.
///
/// Observations are stored flattened; the environment declares the length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub obs: Vec<f32>,
    pub action: usize,
    pub reward: f32,
    pub next_obs: Vec<f32>,
    pub done: bool,
    pub origin_agent: AgentId,
    /// Absolute td-error computed by the sender when the experience was relayed.
    pub td_at_share: Option<f32>,
}

impl Experience {
    pub fn validate(&self, spec: &MarkovGameSpec) -> Result<()> {
        if self.obs.len() != spec.observation_dim || self.next_obs.len() != spec.observation_dim {
            return Err(Error::contract(format!(
                "observation length {}/{} does not match declared dimension {}",
                self.obs.len(),
                self.next_obs.len(),
                spec.observation_dim
            )));
        }
        if self.action >= spec.action_count {
            return Err(Error::contract(format!(
                "action {} outside [0, {})",
                self.action, spec.action_count
            )));
        }
        if let Some(td) = self.td_at_share {
            if !(td >= 0.0) {
                return Err(Error::contract(format!("td_at_share {td} is negative")));
            }
        }
        Ok(())
    }
}

/// Shape of an anonymous Markov game: every agent shares one observation
/// space and one discrete action set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkovGameSpec {
    pub agent_count: usize,
    pub observation_dim: usize,
    pub action_count: usize,
    pub max_episode_steps: usize,
    pub gamma: f64,
}

impl MarkovGameSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("agent_count", self.agent_count),
            ("observation_dim", self.observation_dim),
            ("action_count", self.action_count),
            ("max_episode_steps", self.max_episode_steps),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config("gamma", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Absolute temporal-difference error of one experience.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
pub struct TdError(f64);

impl TdError {
    /// Wraps the magnitude of `delta`.
    pub fn from_delta(delta: f64) -> Self {
        TdError(delta.abs())
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    None,
    Quantile,
    Gaussian,
    Stochastic,
    ShareAll,
    UniformRandom,
}

impl SelectionStrategy {
    pub const ALL: [SelectionStrategy; 6] = [
        SelectionStrategy::None,
        SelectionStrategy::Quantile,
        SelectionStrategy::Gaussian,
        SelectionStrategy::Stochastic,
        SelectionStrategy::ShareAll,
        SelectionStrategy::UniformRandom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SelectionStrategy::None => "none",
            SelectionStrategy::Quantile => "quantile",
            SelectionStrategy::Gaussian => "gaussian",
            SelectionStrategy::Stochastic => "stochastic",
            SelectionStrategy::ShareAll => "share_all",
            SelectionStrategy::UniformRandom => "uniform_random",
        }
    }

    /// Whether the strategy looks at td-error statistics.
    pub fn uses_window(self) -> bool {
        matches!(
            self,
            SelectionStrategy::Quantile | SelectionStrategy::Gaussian | SelectionStrategy::Stochastic
        )
    }
}

impl std::fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SelectionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let normalized = s.trim().to_ascii_lowercase().replace('-', "_");
        SelectionStrategy::ALL
            .into_iter()
            .find(|st| st.name() == normalized)
            .or(match normalized.as_str() {
                "all" => Some(SelectionStrategy::ShareAll),
                "uniform" | "random" => Some(SelectionStrategy::UniformRandom),
                _ => None,
            })
            .ok_or_else(|| Error::config("strategy", format!("unknown selection strategy `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub strategy: SelectionStrategy,
    /// Target fraction of own experiences to share.
    pub bandwidth_beta: f64,
    pub window_size_k: usize,
    /// Gaussian threshold uses `mu + c * sigma^2` when true, `mu + c * sigma` otherwise.
    pub gaussian_use_variance: bool,
    pub stochastic_alpha: f64,
    /// Windowed strategies share nothing until this many td-errors were seen.
    pub min_window: usize,
    /// Added to td-errors before exponentiation in the stochastic rule.
    pub priority_epsilon: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            strategy: SelectionStrategy::None,
            bandwidth_beta: 0.1,
            window_size_k: 1500,
            gaussian_use_variance: true,
            stochastic_alpha: 0.6,
            min_window: 30,
            priority_epsilon: 1e-6,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.bandwidth_beta) {
            return Err(Error::config("bandwidth_beta", "must lie in [0, 1]"));
        }
        if self.window_size_k == 0 {
            return Err(Error::config("window_size_k", "must be at least 1"));
        }
        if !(self.stochastic_alpha >= 0.0) {
            return Err(Error::config("stochastic_alpha", "must be non-negative"));
        }
        if !(self.priority_epsilon > 0.0) {
            return Err(Error::config("priority_epsilon", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Insertion priority used for experiences received from other agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelayPriority {
    /// `(td_at_share + eps)^alpha`, falling back to max priority when absent.
    SenderTd,
    MaxPriority,
}

/// Every DQN-side hyperparameter of a learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub train_batch_size: usize,
    pub rollout_fragment_length: usize,
    /// Hard target sync period, in environment steps.
    pub target_update_freq: u64,
    pub buffer_capacity: usize,
    pub gamma: f64,
    pub epsilon_initial: f64,
    pub epsilon_final: f64,
    pub epsilon_decay_steps: u64,
    pub priority_alpha: f64,
    pub priority_epsilon: f64,
    pub importance_sampling: bool,
    pub is_beta_initial: f64,
    pub is_beta_final: f64,
    pub is_beta_anneal_steps: u64,
    pub dueling: bool,
    pub double_q: bool,
    pub hidden_layers: Vec<usize>,
    pub optimizer: OptimizerKind,
    pub adam_epsilon: f64,
    /// No learning until a buffer holds this many experiences.
    pub learning_starts: usize,
    pub gradient_steps_per_iteration: usize,
    pub relay_priority: RelayPriority,
    /// Filled from the `[selection]` section by the harness.
    #[serde(skip)]
    pub selection: SelectionConfig,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            learning_rate: 0.00016,
            train_batch_size: 32,
            rollout_fragment_length: 4,
            target_update_freq: 1000,
            buffer_capacity: 120_000,
            gamma: 0.99,
            epsilon_initial: 0.1,
            epsilon_final: 0.001,
            epsilon_decay_steps: 100_000,
            priority_alpha: 0.6,
            priority_epsilon: 1e-6,
            importance_sampling: true,
            is_beta_initial: 0.4,
            is_beta_final: 1.0,
            is_beta_anneal_steps: 100_000,
            dueling: true,
            double_q: true,
            hidden_layers: vec![128, 128],
            optimizer: OptimizerKind::Adam,
            adam_epsilon: 0.00015,
            learning_starts: 1000,
            gradient_steps_per_iteration: 1,
            relay_priority: RelayPriority::SenderTd,
            selection: SelectionConfig::default(),
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("train_batch_size", self.train_batch_size as u64),
            ("rollout_fragment_length", self.rollout_fragment_length as u64),
            ("target_update_freq", self.target_update_freq),
            ("buffer_capacity", self.buffer_capacity as u64),
            ("epsilon_decay_steps", self.epsilon_decay_steps),
            ("gradient_steps_per_iteration", self.gradient_steps_per_iteration as u64),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config("gamma", "must lie in [0, 1)"));
        }
        for (name, v) in [
            ("epsilon_initial", self.epsilon_initial),
            ("epsilon_final", self.epsilon_final),
            ("is_beta_initial", self.is_beta_initial),
            ("is_beta_final", self.is_beta_final),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(name, "must lie in [0, 1]"));
            }
        }
        if self.epsilon_final > self.epsilon_initial {
            return Err(Error::config("epsilon_final", "must not exceed epsilon_initial"));
        }
        if !(self.priority_alpha >= 0.0) {
            return Err(Error::config("priority_alpha", "must be non-negative"));
        }
        if !(self.priority_epsilon > 0.0) {
            return Err(Error::config("priority_epsilon", "must be positive"));
        }
        if self.train_batch_size > self.buffer_capacity {
            return Err(Error::config("train_batch_size", "must not exceed buffer_capacity"));
        }
        if self.hidden_layers.is_empty() || self.hidden_layers.contains(&0) {
            return Err(Error::config("hidden_layers", "needs at least one non-empty layer"));
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::config("adam_epsilon", "must be positive"));
        }
        self.selection.validate()
    }
}

/// Fixed-order little-endian binary encoding of experiences.
///
/// A stream starts with a header (`b"SXPR"`, `u16` version, `u32`
/// observation dimension) followed by records:
///
/// | field         | type                 |
/// |---------------|----------------------|
/// | origin_agent  | u32                  |
/// | action        | u32                  |
/// | reward        | f32                  |
/// | done          | u8 (0/1)             |
/// | has_td        | u8 (0/1)             |
/// | td_at_share   | f32 (0 when absent)  |
/// | obs           | obs_dim × f32        |
/// | next_obs      | obs_dim × f32        |
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExperienceCodec {
    pub obs_dim: usize,
}

pub const EXPERIENCE_MAGIC: &[u8; 4] = b"SXPR";
pub const EXPERIENCE_FORMAT_VERSION: u16 = 1;
pub const EXPERIENCE_HEADER_LEN: usize = 10;

impl ExperienceCodec {
    pub fn new(obs_dim: usize) -> Self {
        ExperienceCodec { obs_dim }
    }

    pub fn record_len(&self) -> usize {
        4 + 4 + 4 + 1 + 1 + 4 + 8 * self.obs_dim
    }

    pub fn write_header(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(EXPERIENCE_MAGIC);
        out.extend_from_slice(&EXPERIENCE_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.obs_dim as u32).to_le_bytes());
    }

    /// Parses a stream header and returns the codec it declares.
    pub fn read_header(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < EXPERIENCE_HEADER_LEN || &bytes[..4] != EXPERIENCE_MAGIC {
            return Err(Error::Format("missing experience stream header".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != EXPERIENCE_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported experience format version {version}")));
        }
        let dim = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        Ok(ExperienceCodec { obs_dim: dim })
    }

    pub fn encode(&self, exp: &Experience, out: &mut Vec<u8>) -> Result<()> {
        if exp.obs.len() != self.obs_dim || exp.next_obs.len() != self.obs_dim {
            return Err(Error::contract("experience does not match codec observation dimension"));
        }
        out.reserve(self.record_len());
        out.extend_from_slice(&(exp.origin_agent as u32).to_le_bytes());
        out.extend_from_slice(&(exp.action as u32).to_le_bytes());
        out.extend_from_slice(&exp.reward.to_le_bytes());
        out.push(exp.done as u8);
        out.push(exp.td_at_share.is_some() as u8);
        out.extend_from_slice(&exp.td_at_share.unwrap_or(0.0).to_le_bytes());
        for v in exp.obs.iter().chain(&exp.next_obs) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(())
    }

    /// Decodes one record from the front of `bytes`.
    pub fn decode(&self, bytes: &[u8]) -> Result<(Experience, usize)> {
        let len = self.record_len();
        if bytes.len() < len {
            return Err(Error::Format(format!(
                "truncated experience record: {} of {len} bytes",
                bytes.len()
            )));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let f32_at = |i: usize| f32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let flag = |i: usize| match bytes[i] {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::Format(format!("invalid flag byte {b}"))),
        };
        let done = flag(12)?;
        let has_td = flag(13)?;
        let td = f32_at(14);
        let floats = |start: usize| (0..self.obs_dim).map(|k| f32_at(start + 4 * k)).collect::<Vec<_>>();
        let obs = floats(18);
        let next_obs = floats(18 + 4 * self.obs_dim);
        Ok((
            Experience {
                obs,
                action: u32_at(4) as usize,
                reward: f32_at(8),
                next_obs,
                done,
                origin_agent: u32_at(0) as usize,
                td_at_share: has_td.then_some(td),
            },
            len,
        ))
    }

    /// Encodes a full stream: header followed by every record.
    pub fn encode_stream<'a>(&self, exps: impl IntoIterator<Item = &'a Experience>) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_header(&mut out);
        for e in exps {
            self.encode(e, &mut out)?;
        }
        Ok(out)
    }

    pub fn decode_stream(bytes: &[u8]) -> Result<Vec<Experience>> {
        let codec = Self::read_header(bytes)?;
        let mut rest = &bytes[EXPERIENCE_HEADER_LEN..];
        let mut out = Vec::new();
        while !rest.is_empty() {
            let (exp, used) = codec.decode(rest)?;
            out.push(exp);
            rest = &rest[used..];
        }
        Ok(out)
    }
}
