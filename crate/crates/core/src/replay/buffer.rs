use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sum_tree::SumTree;
use crate::error::{Error, Result};
use crate::types::{Experience, ExperienceCodec};

/// Identifies a buffer slot together with the insertion it held when sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SlotRef {
    pub index: usize,
    pub seq: u64,
}

/// Result of a prioritized draw.
#[derive(Debug)]
pub struct Sample<'a> {
    pub experiences: Vec<&'a Experience>,
    pub slots: Vec<SlotRef>,
    /// Importance-sampling weights normalized by the batch maximum.
    pub weights: Vec<f64>,
    /// Sampling probability `p_i^alpha / sum_k p_k^alpha` of each draw.
    pub probabilities: Vec<f64>,
}

/// Ring buffer with proportional prioritized sampling.
///
/// Leaves hold `(|td| + epsilon)^alpha`; fresh experiences without a hint
/// enter at the largest priority seen so far.
#[derive(Debug, Clone)]
pub struct PrioritizedBuffer {
    capacity: usize,
    alpha: f64,
    epsilon: f64,
    storage: Vec<Experience>,
    seqs: Vec<u64>,
    tree: SumTree,
    cursor: usize,
    next_seq: u64,
    /// Largest raw priority `|td| + epsilon` seen, before exponentiation.
    max_priority: f64,
    stale_updates: u64,
}

impl PrioritizedBuffer {
    pub fn new(capacity: usize, alpha: f64, epsilon: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("buffer_capacity", "must be positive"));
        }
        if !(alpha >= 0.0) {
            return Err(Error::config("priority_alpha", "must be non-negative"));
        }
        if !(epsilon > 0.0) {
            return Err(Error::config("priority_epsilon", "must be positive"));
        }
        Ok(PrioritizedBuffer {
            capacity,
            alpha,
            epsilon,
            storage: Vec::new(),
            seqs: Vec::new(),
            tree: SumTree::new(capacity),
            cursor: 0,
            next_seq: 0,
            max_priority: 1.0,
            stale_updates: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn tree(&self) -> &SumTree {
        &self.tree
    }

    pub fn max_priority(&self) -> f64 {
        self.max_priority
    }

    /// Priority updates skipped because their slot had been overwritten.
    pub fn stale_updates(&self) -> u64 {
        self.stale_updates
    }

    /// Total number of insertions since creation.
    pub fn insertions(&self) -> u64 {
        self.next_seq
    }

    pub fn get(&self, slot: SlotRef) -> Option<&Experience> {
        (self.seqs.get(slot.index) == Some(&slot.seq)).then(|| &self.storage[slot.index])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.storage.iter()
    }

    /// Leaf value `(raw + epsilon)^alpha` for an absolute td-error.
    pub fn leaf_priority(&self, td: f64) -> f64 {
        (td.abs() + self.epsilon).powf(self.alpha)
    }

    /// Stores `exp`, evicting the oldest entry at capacity.
    pub fn insert(&mut self, exp: Experience, priority_hint: Option<f64>) -> SlotRef {
        let leaf = match priority_hint {
            Some(td) => {
                self.max_priority = self.max_priority.max(td.abs() + self.epsilon);
                self.leaf_priority(td)
            }
            None => self.max_priority.powf(self.alpha),
        };
        let index = self.cursor;
        let seq = self.next_seq;
        if index == self.storage.len() {
            self.storage.push(exp);
            self.seqs.push(seq);
        } else {
            self.storage[index] = exp;
            self.seqs[index] = seq;
        }
        self.tree.set(index, leaf);
        self.cursor = (self.cursor + 1) % self.capacity;
        self.next_seq += 1;
        SlotRef { index, seq }
    }

    /// Draws `n` experiences by stratified proportional sampling: one draw
    /// uniformly inside each of `n` equal-mass segments of the tree.
    pub fn sample(&self, n: usize, is_beta: f64, rng: &mut impl Rng) -> Result<Sample<'_>> {
        if self.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let total = self.tree.total();
        let segment = total / n as f64;
        let size = self.len() as f64;
        let mut sample = Sample {
            experiences: Vec::with_capacity(n),
            slots: Vec::with_capacity(n),
            weights: Vec::with_capacity(n),
            probabilities: Vec::with_capacity(n),
        };
        for j in 0..n {
            let mass = (j as f64 + rng.gen::<f64>()) * segment;
            let index = self.tree.find(mass).min(self.len() - 1);
            let p = self.tree.get(index) / total;
            sample.experiences.push(&self.storage[index]);
            sample.slots.push(SlotRef {
                index,
                seq: self.seqs[index],
            });
            sample.probabilities.push(p);
            sample.weights.push((size * p).powf(-is_beta));
        }
        let max_w = sample.weights.iter().copied().fold(0.0, f64::max);
        if max_w > 0.0 && max_w.is_finite() {
            sample.weights.iter_mut().for_each(|w| *w /= max_w);
        }
        Ok(sample)
    }

    /// Sets new priorities from absolute td-errors. Returns how many slots
    /// were updated; slots overwritten since sampling are skipped.
    pub fn update_priorities(&mut self, slots: &[SlotRef], td_errors: &[f64]) -> Result<usize> {
        if slots.len() != td_errors.len() {
            return Err(Error::contract("one td-error per slot required"));
        }
        let mut applied = 0;
        for (slot, &td) in slots.iter().zip(td_errors) {
            if !td.is_finite() {
                return Err(Error::contract("non-finite td-error in priority update"));
            }
            if self.seqs.get(slot.index) != Some(&slot.seq) {
                self.stale_updates += 1;
                continue;
            }
            let raw = td.abs() + self.epsilon;
            self.max_priority = self.max_priority.max(raw);
            self.tree.set(slot.index, raw.powf(self.alpha));
            applied += 1;
        }
        Ok(applied)
    }

    /// Binary snapshot: a little-endian `u64` length, a JSON metadata
    /// block, then the experiences as an experience stream.
    pub fn to_bytes(&self, obs_dim: usize) -> Result<Vec<u8>> {
        let meta = BufferMeta {
            capacity: self.capacity,
            alpha: self.alpha,
            epsilon: self.epsilon,
            leaves: (0..self.len()).map(|i| self.tree.get(i)).collect(),
            seqs: self.seqs.clone(),
            cursor: self.cursor,
            next_seq: self.next_seq,
            max_priority: self.max_priority,
            stale_updates: self.stale_updates,
        };
        let meta = serde_json::to_vec(&meta)?;
        let mut out = Vec::new();
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend(ExperienceCodec::new(obs_dim).encode_stream(&self.storage)?);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Format("buffer snapshot truncated".into()));
        }
        let meta_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let meta_end = 8usize
            .checked_add(meta_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Format("buffer snapshot truncated".into()))?;
        let meta: BufferMeta = serde_json::from_slice(&bytes[8..meta_end])?;
        let storage = ExperienceCodec::decode_stream(&bytes[meta_end..])?;
        if storage.len() != meta.leaves.len() || storage.len() != meta.seqs.len() || storage.len() > meta.capacity {
            return Err(Error::Format("buffer snapshot sizes disagree".into()));
        }
        let mut buf = PrioritizedBuffer::new(meta.capacity, meta.alpha, meta.epsilon)?;
        for (i, &leaf) in meta.leaves.iter().enumerate() {
            buf.tree.set(i, leaf);
        }
        buf.storage = storage;
        buf.seqs = meta.seqs;
        buf.cursor = meta.cursor;
        buf.next_seq = meta.next_seq;
        buf.max_priority = meta.max_priority;
        buf.stale_updates = meta.stale_updates;
        Ok(buf)
    }
}

#[derive(Serialize, Deserialize)]
struct BufferMeta {
    capacity: usize,
    alpha: f64,
    epsilon: f64,
    leaves: Vec<f64>,
    seqs: Vec<u64>,
    cursor: usize,
    next_seq: u64,
    max_priority: f64,
    stale_updates: u64,
}
