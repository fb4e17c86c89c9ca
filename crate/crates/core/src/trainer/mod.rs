//! The training loop: collect, relay, learn, sync.

mod checkpoint;
mod eval;
mod mode;

pub use eval::{evaluate_policy, EvalResult};
pub use mode::RunMode;

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::MultiAgentEnv;
use crate::error::{Error, Result};
use crate::network::{argmax, stack_rows, Architecture, QNetwork};
use crate::optim::OptimizerState;
use crate::relay::{select_and_relay, RelayChannel};
use crate::replay::PrioritizedBuffer;
use crate::selection::WindowStats;
use crate::td::{td_errors, train_on_batch};
use crate::types::{Experience, MarkovGameSpec, RelayPriority, SelectionConfig, TrainerConfig};

/// Episodes averaged into the reported return.
pub const RETURN_WINDOW: usize = 100;

/// `max(final, initial - t * (initial - final) / decay_steps)`.
pub fn epsilon_at(cfg: &TrainerConfig, env_steps: u64) -> f64 {
    let decayed = env_steps as f64 * (cfg.epsilon_initial - cfg.epsilon_final) / cfg.epsilon_decay_steps as f64;
    (cfg.epsilon_initial - decayed).max(cfg.epsilon_final)
}

/// Importance-sampling exponent, linear from initial to final.
pub fn is_beta_at(cfg: &TrainerConfig, env_steps: u64) -> f64 {
    if cfg.is_beta_anneal_steps == 0 {
        return cfg.is_beta_final;
    }
    let frac = (env_steps as f64 / cfg.is_beta_anneal_steps as f64).min(1.0);
    cfg.is_beta_initial + frac * (cfg.is_beta_final - cfg.is_beta_initial)
}

/// Online network, its target copy and their optimizer.
#[derive(Debug, Clone)]
pub struct Brain {
    pub online: QNetwork,
    pub target: QNetwork,
    pub optimizer: OptimizerState,
}

impl Brain {
    fn new(arch: &Architecture, cfg: &TrainerConfig, seed: u64) -> Self {
        let online = QNetwork::new(arch, seed);
        let optimizer = OptimizerState::new(cfg.optimizer, cfg.learning_rate, cfg.adam_epsilon, &online);
        Brain {
            target: online.clone(),
            online,
            optimizer,
        }
    }

    pub fn sync_target(&mut self) -> Result<()> {
        self.target.copy_from(&self.online)
    }

    /// Greedy action, ties to the lowest index.
    pub fn greedy_action(&self, obs: &[f32]) -> Result<usize> {
        let x = stack_rows::<f32>(std::iter::once(obs), self.online.input_dim());
        let q = self.online.forward(x.view())?;
        Ok(argmax(q.row(0).iter().copied()))
    }
}

/// Per-agent learning state besides the networks.
#[derive(Debug, Clone)]
pub struct AgentLearner {
    pub buffer: PrioritizedBuffer,
    pub window: WindowStats,
    pub own_inserted: u64,
    pub received_inserted: u64,
}

/// Running sums between two reports.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Accumulator {
    loss_sum: f64,
    loss_count: u64,
    td_sum: f64,
    td_count: u64,
}

/// Snapshot of training progress for the metrics pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub env_steps: u64,
    pub episodes: u64,
    /// Mean over the last [`RETURN_WINDOW`] completed episodes; NaN before
    /// the first one.
    pub agent_returns: Vec<f64>,
    pub team_return: f64,
    /// Cumulative per-agent shared counts.
    pub shared: Vec<u64>,
    /// Cumulative per-agent shared / offered.
    pub bandwidth: Vec<f64>,
    /// Cumulative shared / offered pooled over agents.
    pub actual_bandwidth: f64,
    /// Mean absolute td-error of training batches since the last report.
    pub mean_td: f64,
    pub loss: f64,
    pub epsilon: f64,
}

/// What one iteration did, per agent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationMetrics {
    pub shared: Vec<usize>,
    pub received: Vec<usize>,
    /// `None` where learning was skipped.
    pub loss: Vec<Option<f64>>,
    pub mean_td: Vec<Option<f64>>,
    pub target_synced: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Streams {
    actions: ChaCha8Rng,
    sampling: ChaCha8Rng,
    selection: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(k);
            r
        };
        Streams {
            actions: stream(1),
            sampling: stream(2),
            selection: stream(3),
        }
    }
}

/// Seed of the environment's own random stream for a run seed.
pub fn env_seed(seed: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x5EED
}

fn init_seed(seed: u64, brain: usize) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D).wrapping_add(brain as u64 + 1)
}

pub struct Trainer<E: MultiAgentEnv> {
    cfg: TrainerConfig,
    mode: RunMode,
    spec: MarkovGameSpec,
    env: E,
    brains: Vec<Brain>,
    learners: Vec<AgentLearner>,
    channel: RelayChannel,
    streams: Streams,
    env_steps: u64,
    iterations: u64,
    syncs: u64,
    observations: Vec<Vec<f32>>,
    episode_progress: Vec<f64>,
    recent_episodes: VecDeque<Vec<f64>>,
    episodes: u64,
    acc: Accumulator,
}

impl<E: MultiAgentEnv> Trainer<E> {
    /// Builds fresh learners and resets `env`. The relay strategy comes from
    /// `mode`; the rest of `cfg.selection` applies as configured.
    pub fn new(cfg: TrainerConfig, mode: RunMode, mut env: E) -> Result<Self> {
        cfg.validate()?;
        let mut spec = env.spec();
        spec.gamma = cfg.gamma;
        spec.validate()?;
        let arch = Architecture {
            input_dim: spec.observation_dim,
            hidden: cfg.hidden_layers.clone(),
            action_count: spec.action_count,
            dueling: cfg.dueling,
        };
        let n = spec.agent_count;
        let brain_count = if mode.shares_parameters() { 1 } else { n };
        let brains = (0..brain_count).map(|b| Brain::new(&arch, &cfg, init_seed(cfg.seed, b))).collect();
        let learners = (0..n)
            .map(|_| {
                Ok(AgentLearner {
                    buffer: PrioritizedBuffer::new(cfg.buffer_capacity, cfg.priority_alpha, cfg.priority_epsilon)?,
                    window: WindowStats::new(cfg.selection.window_size_k),
                    own_inserted: 0,
                    received_inserted: 0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let observations = env.reset()?;
        Ok(Trainer {
            streams: Streams::new(cfg.seed),
            channel: RelayChannel::new(n, spec.observation_dim),
            cfg,
            mode,
            spec,
            env,
            brains,
            learners,
            env_steps: 0,
            iterations: 0,
            syncs: 0,
            observations,
            episode_progress: vec![0.0; n],
            recent_episodes: VecDeque::new(),
            episodes: 0,
            acc: Accumulator::default(),
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.cfg
    }

    pub fn mode(&self) -> RunMode {
        self.mode
    }

    pub fn spec(&self) -> MarkovGameSpec {
        self.spec
    }

    pub fn env(&self) -> &E {
        &self.env
    }

    pub fn brains(&self) -> &[Brain] {
        &self.brains
    }

    pub fn learners(&self) -> &[AgentLearner] {
        &self.learners
    }

    pub fn channel(&self) -> &RelayChannel {
        &self.channel
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn epsilon(&self) -> f64 {
        epsilon_at(&self.cfg, self.env_steps)
    }

    /// The brain acting for `agent`.
    pub fn brain_of(&self, agent: usize) -> &Brain {
        &self.brains[self.brain_index(agent)]
    }

    fn brain_index(&self, agent: usize) -> usize {
        if self.mode.shares_parameters() {
            0
        } else {
            agent
        }
    }

    fn selection(&self) -> SelectionConfig {
        SelectionConfig {
            strategy: self.mode.relay_strategy(),
            ..self.cfg.selection.clone()
        }
    }

    /// Runs `rollout_fragment_length` joint steps with epsilon-greedy
    /// actions, resetting the environment at episode ends. Returns each
    /// agent's experiences in step order.
    pub fn collect_rollout(&mut self) -> Result<Vec<Vec<Experience>>> {
        let n = self.spec.agent_count;
        let mut batches = vec![Vec::with_capacity(self.cfg.rollout_fragment_length); n];
        for _ in 0..self.cfg.rollout_fragment_length {
            let eps = self.epsilon();
            let mut actions = Vec::with_capacity(n);
            for agent in 0..n {
                let explore = self.streams.actions.gen::<f64>() < eps;
                let a = if explore {
                    self.streams.actions.gen_range(0..self.spec.action_count)
                } else {
                    self.brain_of(agent).greedy_action(&self.observations[agent])?
                };
                actions.push(a);
            }
            let step = self.env.step(&actions)?;
            if step.rewards.len() != n || step.observations.len() != n {
                return Err(Error::contract("environment returned the wrong number of agents"));
            }
            self.env_steps += 1;
            for agent in 0..n {
                self.episode_progress[agent] += step.rewards[agent] as f64;
                batches[agent].push(Experience {
                    obs: std::mem::take(&mut self.observations[agent]),
                    action: actions[agent],
                    reward: step.rewards[agent],
                    next_obs: step.observations[agent].clone(),
                    done: step.done,
                    origin_agent: agent,
                    td_at_share: None,
                });
            }
            if step.done {
                self.finish_episode();
                self.observations = self.env.reset()?;
            } else {
                self.observations = step.observations;
            }
        }
        Ok(batches)
    }

    fn finish_episode(&mut self) {
        let returns = std::mem::replace(&mut self.episode_progress, vec![0.0; self.spec.agent_count]);
        self.recent_episodes.push_back(returns);
        if self.recent_episodes.len() > RETURN_WINDOW {
            self.recent_episodes.pop_front();
        }
        self.episodes += 1;
    }

    /// Own experiences enter at the buffer's maximum priority.
    pub fn insert_own(&mut self, batches: &[Vec<Experience>]) {
        for (learner, batch) in self.learners.iter_mut().zip(batches) {
            for e in batch {
                learner.buffer.insert(e.clone(), None);
                learner.own_inserted += 1;
            }
        }
    }

    /// Scores each agent's fresh batch with its own pre-update networks and
    /// offers it to the relay. Returns shared counts.
    pub fn relay(&mut self, batches: &[Vec<Experience>]) -> Result<Vec<usize>> {
        let sel = self.selection();
        let mut shared = vec![0; batches.len()];
        if sel.strategy == crate::types::SelectionStrategy::None {
            return Ok(shared);
        }
        for (agent, batch) in batches.iter().enumerate() {
            if batch.is_empty() {
                continue;
            }
            let brain = &self.brains[self.brain_index(agent)];
            let refs: Vec<&Experience> = batch.iter().collect();
            let tds: Vec<f64> = td_errors(&brain.online, &brain.target, &refs, self.cfg.gamma, self.cfg.double_q)?
                .into_iter()
                .map(|t| t.value())
                .collect();
            if tds.iter().any(|t| !t.is_finite()) {
                return Err(Error::Divergence {
                    step: self.env_steps,
                    message: format!("non-finite td-error for agent {agent}"),
                });
            }
            shared[agent] = select_and_relay(
                agent,
                batch,
                &tds,
                &sel,
                &mut self.learners[agent].window,
                &self.channel,
                &mut self.streams.selection,
            )?;
        }
        Ok(shared)
    }

    /// Moves relayed experiences into the recipients' buffers.
    pub fn drain_received(&mut self) -> Result<Vec<usize>> {
        let mut received = Vec::with_capacity(self.learners.len());
        for (agent, learner) in self.learners.iter_mut().enumerate() {
            let incoming = self.channel.drain(agent)?;
            received.push(incoming.len());
            for e in incoming {
                let hint = match self.cfg.relay_priority {
                    RelayPriority::SenderTd => e.td_at_share.map(f64::from),
                    RelayPriority::MaxPriority => None,
                };
                learner.buffer.insert(e, hint);
                learner.received_inserted += 1;
            }
        }
        Ok(received)
    }

    /// One or more prioritized gradient steps per agent whose buffer is past
    /// warmup, followed by priority refresh. Returns per-agent loss and mean
    /// td-error of the last step.
    pub fn learn(&mut self) -> Result<Vec<(Option<f64>, Option<f64>)>> {
        let warmup = self.cfg.learning_starts.max(self.cfg.train_batch_size);
        let is_beta = if self.cfg.importance_sampling {
            is_beta_at(&self.cfg, self.env_steps)
        } else {
            0.0
        };
        let mut out = Vec::with_capacity(self.learners.len());
        for agent in 0..self.learners.len() {
            if self.learners[agent].buffer.len() < warmup {
                out.push((None, None));
                continue;
            }
            let b = self.brain_index(agent);
            let mut last = (None, None);
            for _ in 0..self.cfg.gradient_steps_per_iteration {
                let learner = &mut self.learners[agent];
                let brain = &mut self.brains[b];
                let sample = learner
                    .buffer
                    .sample(self.cfg.train_batch_size, is_beta, &mut self.streams.sampling)?;
                let outcome = train_on_batch(
                    &mut brain.online,
                    &mut brain.optimizer,
                    &brain.target,
                    &sample.experiences,
                    &sample.weights,
                    self.cfg.gamma,
                    self.cfg.double_q,
                )?;
                let slots = sample.slots;
                learner.buffer.update_priorities(&slots, &outcome.td_errors)?;
                let mean_td = outcome.td_errors.iter().sum::<f64>() / outcome.td_errors.len() as f64;
                self.acc.loss_sum += outcome.loss;
                self.acc.loss_count += 1;
                self.acc.td_sum += mean_td;
                self.acc.td_count += 1;
                last = (Some(outcome.loss), Some(mean_td));
            }
            out.push(last);
        }
        Ok(out)
    }

    /// Hard-copies online into target whenever the step count has crossed
    /// a new multiple of `target_update_freq`.
    pub fn sync_targets(&mut self) -> Result<bool> {
        let due = self.env_steps / self.cfg.target_update_freq;
        if due <= self.syncs {
            return Ok(false);
        }
        self.syncs = due;
        for brain in &mut self.brains {
            brain.sync_target()?;
        }
        Ok(true)
    }

    /// Collect, insert, relay, drain, learn, sync. Exploration decays with
    /// the environment step count.
    pub fn train_iteration(&mut self) -> Result<IterationMetrics> {
        let batches = self.collect_rollout()?;
        self.insert_own(&batches);
        let shared = self.relay(&batches)?;
        let received = self.drain_received()?;
        let (loss, mean_td) = self.learn()?.into_iter().unzip();
        let target_synced = self.sync_targets()?;
        self.iterations += 1;
        Ok(IterationMetrics {
            shared,
            received,
            loss,
            mean_td,
            target_synced,
        })
    }

    /// Metrics since the previous report; clears the loss and td sums.
    pub fn take_report(&mut self) -> Report {
        let n = self.spec.agent_count;
        let episodes = self.recent_episodes.len();
        let agent_returns: Vec<f64> = (0..n)
            .map(|a| {
                if episodes == 0 {
                    f64::NAN
                } else {
                    self.recent_episodes.iter().map(|r| r[a]).sum::<f64>() / episodes as f64
                }
            })
            .collect();
        let counters = self.channel.all_counters();
        let offered: u64 = counters.iter().map(|c| c.experiences_offered).sum();
        let shared: u64 = counters.iter().map(|c| c.experiences_shared).sum();
        let mean = |sum: f64, count: u64| if count == 0 { f64::NAN } else { sum / count as f64 };
        let report = Report {
            env_steps: self.env_steps,
            episodes: self.episodes,
            team_return: agent_returns.iter().sum(),
            agent_returns,
            shared: counters.iter().map(|c| c.experiences_shared).collect(),
            bandwidth: counters.iter().map(|c| c.actual_bandwidth()).collect(),
            actual_bandwidth: if offered == 0 { 0.0 } else { shared as f64 / offered as f64 },
            mean_td: mean(self.acc.td_sum, self.acc.td_count),
            loss: mean(self.acc.loss_sum, self.acc.loss_count),
            epsilon: self.epsilon(),
        };
        self.acc = Accumulator::default();
        report
    }

    /// Greedy episodes on a separate environment.
    pub fn evaluate<G: MultiAgentEnv>(&self, env: &mut G, episodes: usize) -> Result<EvalResult> {
        evaluate_policy(env, episodes, |_, obs| {
            obs.iter()
                .enumerate()
                .map(|(agent, o)| self.brain_of(agent).greedy_action(o))
                .collect()
        })
    }
}
