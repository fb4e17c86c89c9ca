//! Prioritized experience replay: a ring buffer whose sampling distribution
//! is `P(i) = p_i^alpha / sum_k p_k^alpha` with `p_i = |td_i| + epsilon`.

mod buffer;
mod sum_tree;

pub use buffer::{PrioritizedBuffer, Sample, SlotRef};
pub use sum_tree::SumTree;
