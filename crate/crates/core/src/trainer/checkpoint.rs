//! Checkpoint directory layout:
//!
//! ```text
//! trainer.json             counters, random streams, windows, environment state
//! brain<i>.online.qnet     online network of brain i
//! brain<i>.target.qnet     target network
//! brain<i>.moment1.qnet    optimizer first moments
//! brain<i>.moment2.qnet    optimizer second moments
//! agent<j>.buffer.bin      replay buffer of agent j
//! ```
//!
//! Brains number one per agent, or a single one under parameter sharing.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Accumulator, AgentLearner, Brain, RunMode, Streams, Trainer};
use crate::env::MultiAgentEnv;
use crate::error::{Error, Result};
use crate::network::QNetwork;
use crate::optim::OptimizerState;
use crate::relay::{ChannelCounters, RelayChannel};
use crate::replay::PrioritizedBuffer;
use crate::selection::WindowStats;
use crate::types::{OptimizerKind, SelectionConfig, TrainerConfig};

const FORMAT_VERSION: u32 = 1;
const STATE_FILE: &str = "trainer.json";

#[derive(Serialize, Deserialize)]
struct OptimizerMeta {
    kind: OptimizerKind,
    learning_rate: f64,
    adam_epsilon: f64,
    beta1: f64,
    beta2: f64,
    step_count: u64,
}

#[derive(Serialize, Deserialize)]
struct LearnerMeta {
    window: WindowStats,
    own_inserted: u64,
    received_inserted: u64,
}

#[derive(Serialize, Deserialize)]
struct TrainerState {
    format_version: u32,
    mode: RunMode,
    config: TrainerConfig,
    selection: SelectionConfig,
    env_steps: u64,
    iterations: u64,
    syncs: u64,
    episodes: u64,
    observations: Vec<Vec<f32>>,
    episode_progress: Vec<f64>,
    recent_episodes: VecDeque<Vec<f64>>,
    acc: Accumulator,
    streams: Streams,
    learners: Vec<LearnerMeta>,
    optimizers: Vec<OptimizerMeta>,
    channel: Vec<ChannelCounters>,
    env: serde_json::Value,
}

fn write_net(path: &Path, net: &QNetwork) -> Result<()> {
    fs::write(path, net.to_bytes())?;
    Ok(())
}

fn read_net(path: &Path) -> Result<QNetwork> {
    QNetwork::from_bytes(&fs::read(path)?)
}

impl<E: MultiAgentEnv> Trainer<E> {
    /// Writes everything needed to continue bit-for-bit into `dir`.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (i, b) in self.brains.iter().enumerate() {
            write_net(&dir.join(format!("brain{i}.online.qnet")), &b.online)?;
            write_net(&dir.join(format!("brain{i}.target.qnet")), &b.target)?;
            write_net(&dir.join(format!("brain{i}.moment1.qnet")), &b.optimizer.first_moment)?;
            write_net(&dir.join(format!("brain{i}.moment2.qnet")), &b.optimizer.second_moment)?;
        }
        for (j, l) in self.learners.iter().enumerate() {
            fs::write(
                dir.join(format!("agent{j}.buffer.bin")),
                l.buffer.to_bytes(self.spec.observation_dim)?,
            )?;
        }
        let state = TrainerState {
            format_version: FORMAT_VERSION,
            mode: self.mode,
            config: self.cfg.clone(),
            selection: self.cfg.selection.clone(),
            env_steps: self.env_steps,
            iterations: self.iterations,
            syncs: self.syncs,
            episodes: self.episodes,
            observations: self.observations.clone(),
            episode_progress: self.episode_progress.clone(),
            recent_episodes: self.recent_episodes.clone(),
            acc: self.acc.clone(),
            streams: self.streams.clone(),
            learners: self
                .learners
                .iter()
                .map(|l| LearnerMeta {
                    window: l.window.clone(),
                    own_inserted: l.own_inserted,
                    received_inserted: l.received_inserted,
                })
                .collect(),
            optimizers: self
                .brains
                .iter()
                .map(|b| {
                    let o = &b.optimizer;
                    OptimizerMeta {
                        kind: o.kind,
                        learning_rate: o.learning_rate,
                        adam_epsilon: o.adam_epsilon,
                        beta1: o.beta1,
                        beta2: o.beta2,
                        step_count: o.step_count,
                    }
                })
                .collect(),
            channel: self.channel.all_counters(),
            env: self.env.snapshot()?,
        };
        fs::write(dir.join(STATE_FILE), serde_json::to_vec_pretty(&state)?)?;
        Ok(())
    }

    /// Rebuilds a trainer from `dir`; `env` must be constructed with the
    /// same configuration as the saved one.
    pub fn resume(dir: &Path, mut env: E) -> Result<Self> {
        let state: TrainerState = serde_json::from_slice(&fs::read(dir.join(STATE_FILE))?)?;
        if state.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                state.format_version
            )));
        }
        env.restore(&state.env)?;
        let mut cfg = state.config;
        cfg.selection = state.selection;
        cfg.validate()?;
        let mut spec = env.spec();
        spec.gamma = cfg.gamma;
        let n = spec.agent_count;
        let brain_count = if state.mode.shares_parameters() { 1 } else { n };
        if state.optimizers.len() != brain_count || state.learners.len() != n {
            return Err(Error::Format("checkpoint agent count does not match environment".into()));
        }
        let mut brains = Vec::with_capacity(brain_count);
        for (i, meta) in state.optimizers.into_iter().enumerate() {
            let online = read_net(&dir.join(format!("brain{i}.online.qnet")))?;
            if online.input_dim() != spec.observation_dim || online.action_count() != spec.action_count {
                return Err(Error::Format("checkpoint network does not fit the environment".into()));
            }
            let target = read_net(&dir.join(format!("brain{i}.target.qnet")))?;
            let optimizer = OptimizerState {
                kind: meta.kind,
                learning_rate: meta.learning_rate,
                adam_epsilon: meta.adam_epsilon,
                beta1: meta.beta1,
                beta2: meta.beta2,
                step_count: meta.step_count,
                first_moment: read_net(&dir.join(format!("brain{i}.moment1.qnet")))?,
                second_moment: read_net(&dir.join(format!("brain{i}.moment2.qnet")))?,
            };
            if !online.same_shape(&target) || !online.same_shape(&optimizer.first_moment) {
                return Err(Error::Format(format!("brain {i} tensors disagree in shape")));
            }
            brains.push(Brain {
                online,
                target,
                optimizer,
            });
        }
        let mut learners = Vec::with_capacity(n);
        for (j, meta) in state.learners.into_iter().enumerate() {
            let buffer = PrioritizedBuffer::from_bytes(&fs::read(dir.join(format!("agent{j}.buffer.bin")))?)?;
            learners.push(AgentLearner {
                buffer,
                window: meta.window,
                own_inserted: meta.own_inserted,
                received_inserted: meta.received_inserted,
            });
        }
        let channel = RelayChannel::new(n, spec.observation_dim);
        channel.restore_counters(&state.channel)?;
        Ok(Trainer {
            cfg,
            mode: state.mode,
            spec,
            env,
            brains,
            learners,
            channel,
            streams: state.streams,
            env_steps: state.env_steps,
            iterations: state.iterations,
            syncs: state.syncs,
            observations: state.observations,
            episode_progress: state.episode_progress,
            recent_episodes: state.recent_episodes,
            episodes: state.episodes,
            acc: state.acc,
        })
    }
}
