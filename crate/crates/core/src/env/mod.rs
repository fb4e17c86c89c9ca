//! Multi-agent environments the learners run against.

mod pursuit;
mod trace;

pub use pursuit::{
    mini_pursuit_config, Action, Cell, GridState, ObstacleLayout, Pursuit, PursuitConfig, StepDetail,
    OBS_CHANNELS,
};
pub use trace::{TraceRecord, TraceWriter};

use crate::error::Result;
use crate::types::MarkovGameSpec;

/// What one joint step returns to the learners.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub observations: Vec<Vec<f32>>,
    pub rewards: Vec<f32>,
    pub done: bool,
}

/// A seeded, anonymous Markov game stepped with one action per agent.
pub trait MultiAgentEnv {
    /// `gamma` is left to the learner; environments report 0.99.
    fn spec(&self) -> MarkovGameSpec;

    /// Starts a new episode, continuing the environment's random stream.
    fn reset(&mut self) -> Result<Vec<Vec<f32>>>;

    fn step(&mut self, actions: &[usize]) -> Result<EnvStep>;

    /// Serializable snapshot of the full environment state, random stream included.
    fn snapshot(&self) -> Result<serde_json::Value>;

    fn restore(&mut self, snapshot: &serde_json::Value) -> Result<()>;
}
