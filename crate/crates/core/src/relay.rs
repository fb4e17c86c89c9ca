//! The metered channel that carries selected experiences between agents,
//! and the per-batch selection step that feeds it.
//!
//! Experiences cross the channel as encoded byte records, so an
//! out-of-process [`Transport`] can replace [`InProcessTransport`] without
//! touching selection logic.

use std::sync::Mutex;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selection::{should_share_gaussian, should_share_quantile, should_share_stochastic, WindowStats};
use crate::types::{AgentId, Experience, ExperienceCodec, SelectionConfig, SelectionStrategy};

/// Delivery of opaque payloads to per-recipient queues.
pub trait Transport: Send + Sync {
    fn send(&self, sender: AgentId, recipient: AgentId, payload: Vec<u8>) -> Result<()>;

    /// Removes and returns everything queued for `recipient`, in arrival order.
    fn receive_all(&self, recipient: AgentId) -> Result<Vec<(AgentId, Vec<u8>)>>;
}

/// Mutex-guarded queues, one per recipient.
#[derive(Debug)]
pub struct InProcessTransport {
    queues: Vec<Mutex<Vec<(AgentId, Vec<u8>)>>>,
}

impl InProcessTransport {
    pub fn new(agent_count: usize) -> Self {
        InProcessTransport {
            queues: (0..agent_count).map(|_| Mutex::new(Vec::new())).collect(),
        }
    }

    fn queue(&self, agent: AgentId) -> Result<&Mutex<Vec<(AgentId, Vec<u8>)>>> {
        self.queues
            .get(agent)
            .ok_or_else(|| Error::contract(format!("unknown agent {agent}")))
    }
}

impl Transport for InProcessTransport {
    fn send(&self, sender: AgentId, recipient: AgentId, payload: Vec<u8>) -> Result<()> {
        self.queue(recipient)?.lock().unwrap().push((sender, payload));
        Ok(())
    }

    fn receive_all(&self, recipient: AgentId) -> Result<Vec<(AgentId, Vec<u8>)>> {
        Ok(std::mem::take(&mut *self.queue(recipient)?.lock().unwrap()))
    }
}

/// Per-sender accounting of what was offered to and put on the channel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelCounters {
    pub experiences_offered: u64,
    pub experiences_shared: u64,
    /// Encoded record bytes of the shared experiences, counted once per
    /// experience regardless of fan-out.
    pub bytes_shared: u64,
}

impl ChannelCounters {
    /// `shared / offered`, zero before anything was offered.
    pub fn actual_bandwidth(&self) -> f64 {
        if self.experiences_offered == 0 {
            0.0
        } else {
            self.experiences_shared as f64 / self.experiences_offered as f64
        }
    }
}

#[derive(Debug, Default)]
struct Ledger {
    counters: Vec<ChannelCounters>,
    /// Experiences placed in recipient queues since the last reset.
    enqueued: u64,
}

/// Broadcast channel: whatever an agent shares lands in every other
/// agent's queue.
pub struct RelayChannel<T: Transport = InProcessTransport> {
    agent_count: usize,
    codec: ExperienceCodec,
    transport: T,
    ledger: Mutex<Ledger>,
}

impl RelayChannel<InProcessTransport> {
    pub fn new(agent_count: usize, obs_dim: usize) -> Self {
        Self::with_transport(agent_count, obs_dim, InProcessTransport::new(agent_count))
    }
}

impl<T: Transport> RelayChannel<T> {
    pub fn with_transport(agent_count: usize, obs_dim: usize, transport: T) -> Self {
        RelayChannel {
            agent_count,
            codec: ExperienceCodec::new(obs_dim),
            transport,
            ledger: Mutex::new(Ledger {
                counters: vec![ChannelCounters::default(); agent_count],
                enqueued: 0,
            }),
        }
    }

    pub fn agent_count(&self) -> usize {
        self.agent_count
    }

    fn check_agent(&self, agent: AgentId) -> Result<()> {
        if agent >= self.agent_count {
            return Err(Error::contract(format!(
                "agent {agent} outside channel of {}",
                self.agent_count
            )));
        }
        Ok(())
    }

    pub fn record_offered(&self, sender: AgentId, count: usize) -> Result<()> {
        self.check_agent(sender)?;
        self.ledger.lock().unwrap().counters[sender].experiences_offered += count as u64;
        Ok(())
    }

    /// Enqueues `experiences` for every agent except `sender`.
    pub fn broadcast(&self, sender: AgentId, experiences: &[Experience]) -> Result<()> {
        self.check_agent(sender)?;
        if experiences.is_empty() {
            return Ok(());
        }
        let payload = self.codec.encode_stream(experiences)?;
        let record_bytes = (experiences.len() * self.codec.record_len()) as u64;
        // hold the ledger across the sends so counters and queues agree
        let mut ledger = self.ledger.lock().unwrap();
        for recipient in (0..self.agent_count).filter(|&r| r != sender) {
            self.transport.send(sender, recipient, payload.clone())?;
            ledger.enqueued += experiences.len() as u64;
        }
        let c = &mut ledger.counters[sender];
        c.experiences_shared += experiences.len() as u64;
        c.bytes_shared += record_bytes;
        Ok(())
    }

    /// Everything queued for `recipient`, ordered by sender id and then by
    /// enqueue order. The queue is empty afterwards.
    pub fn drain(&self, recipient: AgentId) -> Result<Vec<Experience>> {
        self.check_agent(recipient)?;
        let mut messages = self.transport.receive_all(recipient)?;
        messages.sort_by_key(|(sender, _)| *sender);
        let mut out = Vec::new();
        for (_, payload) in messages {
            out.extend(ExperienceCodec::decode_stream(&payload)?);
        }
        Ok(out)
    }

    pub fn counters(&self, agent: AgentId) -> ChannelCounters {
        self.ledger.lock().unwrap().counters[agent]
    }

    pub fn all_counters(&self) -> Vec<ChannelCounters> {
        self.ledger.lock().unwrap().counters.clone()
    }

    pub fn restore_counters(&self, counters: &[ChannelCounters]) -> Result<()> {
        if counters.len() != self.agent_count {
            return Err(Error::contract("counter snapshot has the wrong agent count"));
        }
        self.ledger.lock().unwrap().counters = counters.to_vec();
        Ok(())
    }

    pub fn enqueued_total(&self) -> u64 {
        self.ledger.lock().unwrap().enqueued
    }

    pub fn reset_counters(&self) {
        let mut ledger = self.ledger.lock().unwrap();
        ledger.counters.iter_mut().for_each(|c| *c = ChannelCounters::default());
        ledger.enqueued = 0;
    }
}

/// Applies the configured strategy to each experience of `batch` in order,
/// updating `window` after every decision, and broadcasts the selected ones
/// with `td_at_share` set. Returns how many were shared.
///
/// Windowed strategies share nothing until the window holds
/// `cfg.min_window` values.
pub fn select_and_relay<T: Transport>(
    agent: AgentId,
    batch: &[Experience],
    td_errors: &[f64],
    cfg: &SelectionConfig,
    window: &mut WindowStats,
    channel: &RelayChannel<T>,
    rng: &mut impl Rng,
) -> Result<usize> {
    if batch.len() != td_errors.len() {
        return Err(Error::contract("one td-error per experience required"));
    }
    if cfg.strategy == SelectionStrategy::None {
        return Ok(0);
    }
    let beta = cfg.bandwidth_beta;
    let mut selected = Vec::new();
    for (exp, &td) in batch.iter().zip(td_errors) {
        if !(td >= 0.0) {
            return Err(Error::contract(format!("td-error {td} must be non-negative")));
        }
        let warmed = window.count() >= cfg.min_window.max(1);
        let share = match cfg.strategy {
            SelectionStrategy::None => false,
            SelectionStrategy::ShareAll => true,
            SelectionStrategy::UniformRandom => rng.gen::<f64>() < beta,
            SelectionStrategy::Quantile => warmed && should_share_quantile(window, td, beta),
            SelectionStrategy::Gaussian => {
                warmed && should_share_gaussian(window, td, beta, cfg.gaussian_use_variance)
            }
            SelectionStrategy::Stochastic => {
                warmed
                    && should_share_stochastic(window, td, beta, cfg.stochastic_alpha, cfg.priority_epsilon, rng)
            }
        };
        window.push(td);
        if share {
            let mut e = exp.clone();
            e.td_at_share = Some(td as f32);
            selected.push(e);
        }
    }
    channel.record_offered(agent, batch.len())?;
    channel.broadcast(agent, &selected)?;
    Ok(selected.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exp(origin: AgentId, tag: f32) -> Experience {
        Experience {
            obs: vec![tag, 0.0],
            action: 1,
            reward: tag,
            next_obs: vec![0.0, tag],
            done: false,
            origin_agent: origin,
            td_at_share: None,
        }
    }

    fn cfg(strategy: SelectionStrategy, beta: f64) -> SelectionConfig {
        SelectionConfig {
            strategy,
            bandwidth_beta: beta,
            ..SelectionConfig::default()
        }
    }

    #[test]
    fn none_leaves_channel_untouched() {
        let ch = RelayChannel::new(3, 2);
        let mut w = WindowStats::new(10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = vec![exp(0, 1.0); 4];
        let n = select_and_relay(0, &batch, &[1.0; 4], &cfg(SelectionStrategy::None, 0.5), &mut w, &ch, &mut rng)
            .unwrap();
        assert_eq!(n, 0);
        assert_eq!(ch.counters(0), ChannelCounters::default());
        assert_eq!(ch.enqueued_total(), 0);
        assert!((0..3).all(|r| ch.drain(r).unwrap().is_empty()));
    }

    #[test]
    fn share_all_broadcasts_to_every_other_agent() {
        let ch = RelayChannel::new(3, 2);
        let mut w = WindowStats::new(10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch: Vec<_> = (0..4).map(|i| exp(0, i as f32)).collect();
        let tds = [0.1, 0.2, 0.3, 0.4];
        let n = select_and_relay(0, &batch, &tds, &cfg(SelectionStrategy::ShareAll, 0.1), &mut w, &ch, &mut rng)
            .unwrap();
        assert_eq!(n, 4);
        assert!(ch.drain(0).unwrap().is_empty());
        for r in [1, 2] {
            let got = ch.drain(r).unwrap();
            assert_eq!(got.len(), 4);
            for (g, (b, td)) in got.iter().zip(batch.iter().zip(tds)) {
                assert_eq!(g.obs, b.obs);
                assert_eq!(g.td_at_share, Some(td as f32));
            }
        }
        let c = ch.counters(0);
        assert_eq!((c.experiences_offered, c.experiences_shared), (4, 4));
        assert_eq!(c.actual_bandwidth(), 1.0);
        assert_eq!(ch.enqueued_total(), 8);
    }

    #[test]
    fn drain_is_sender_major_and_clears() {
        let ch = RelayChannel::new(3, 2);
        ch.broadcast(2, &[exp(2, 20.0)]).unwrap();
        ch.broadcast(1, &[exp(1, 10.0)]).unwrap();
        ch.broadcast(2, &[exp(2, 21.0)]).unwrap();
        ch.broadcast(1, &[exp(1, 11.0)]).unwrap();
        let got: Vec<f32> = ch.drain(0).unwrap().iter().map(|e| e.reward).collect();
        assert_eq!(got, vec![10.0, 11.0, 20.0, 21.0]);
        assert!(ch.drain(0).unwrap().is_empty());
        // agent 1 sees only agent 2's messages
        let got: Vec<f32> = ch.drain(1).unwrap().iter().map(|e| e.reward).collect();
        assert_eq!(got, vec![20.0, 21.0]);
    }

    #[test]
    fn quantile_waits_for_minimum_window() {
        let ch = RelayChannel::new(2, 2);
        let mut w = WindowStats::new(100);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = SelectionConfig {
            min_window: 5,
            ..cfg(SelectionStrategy::Quantile, 1.0)
        };
        let batch = vec![exp(0, 0.0); 8];
        let n = select_and_relay(0, &batch, &[1.0; 8], &c, &mut w, &ch, &mut rng).unwrap();
        // beta = 1 shares every decision once five values are in the window
        assert_eq!(n, 3);
        assert_eq!(w.count(), 8);
    }

    #[test]
    fn rejects_bad_inputs() {
        let ch = RelayChannel::new(2, 2);
        let mut w = WindowStats::new(10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = cfg(SelectionStrategy::ShareAll, 0.1);
        assert!(select_and_relay(0, &[exp(0, 0.0)], &[], &c, &mut w, &ch, &mut rng).is_err());
        assert!(select_and_relay(0, &[exp(0, 0.0)], &[-1.0], &c, &mut w, &ch, &mut rng).is_err());
        assert!(select_and_relay(5, &[exp(0, 0.0)], &[1.0], &c, &mut w, &ch, &mut rng).is_err());
    }
}
