//! Sliding-window td-error statistics and the per-experience share rules.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// The last `k` absolute td-errors of one agent's own experiences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    capacity: usize,
    ring: Vec<f64>,
    head: usize,
    sum: f64,
    sum_sq: f64,
}

impl WindowStats {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "window needs room for one value");
        WindowStats {
            capacity,
            ring: Vec::with_capacity(capacity),
            head: 0,
            sum: 0.0,
            sum_sq: 0.0,
        }
    }

    pub fn from_values(capacity: usize, values: impl IntoIterator<Item = f64>) -> Self {
        let mut w = Self::new(capacity);
        values.into_iter().for_each(|v| w.push(v));
        w
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn count(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    /// Window contents in storage order.
    pub fn values(&self) -> &[f64] {
        &self.ring
    }

    pub fn push(&mut self, td: f64) {
        if self.ring.len() < self.capacity {
            self.ring.push(td);
            self.sum += td;
            self.sum_sq += td * td;
            return;
        }
        let old = std::mem::replace(&mut self.ring[self.head], td);
        self.head = (self.head + 1) % self.capacity;
        if self.head == 0 {
            // wrapped: refresh the running sums exactly
            self.sum = self.ring.iter().sum();
            self.sum_sq = self.ring.iter().map(|v| v * v).sum();
        } else {
            self.sum += td - old;
            self.sum_sq += td * td - old * old;
        }
    }

    pub fn sum(&self) -> f64 {
        self.sum
    }

    pub fn mean(&self) -> f64 {
        if self.ring.is_empty() {
            0.0
        } else {
            self.sum / self.ring.len() as f64
        }
    }

    /// Population variance of the window.
    pub fn variance(&self) -> f64 {
        if self.ring.is_empty() {
            return 0.0;
        }
        let n = self.ring.len() as f64;
        let mean = self.sum / n;
        let var = self.sum_sq / n - mean * mean;
        // running sums cancel badly on near-constant windows
        if var <= 1e-12 * mean * mean {
            0.0
        } else {
            var
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    /// The `rank`-th largest value (1-based).
    pub fn kth_largest(&self, rank: usize) -> Option<f64> {
        if rank == 0 || rank > self.ring.len() {
            return None;
        }
        let mut scratch = self.ring.clone();
        let idx = rank - 1;
        let (_, v, _) = scratch.select_nth_unstable_by(idx, |a, b| b.total_cmp(a));
        Some(*v)
    }

    /// Share threshold of the quantile rule: the `ceil(count * beta)`-th
    /// largest value, or `None` when that rank is zero or the window empty.
    pub fn quantile_threshold(&self, beta: f64) -> Option<f64> {
        let rank = (self.count() as f64 * beta - 1e-9).ceil().max(0.0) as usize;
        self.kth_largest(rank.min(self.count()))
    }
}

/// Shares when `td` is at least the `ceil(count * beta)`-th largest value
/// in the window. Never shares from an empty window.
pub fn should_share_quantile(stats: &WindowStats, td: f64, beta: f64) -> bool {
    stats.quantile_threshold(beta).is_some_and(|t| td >= t)
}

/// Upper-tail standard normal quantile: the `c` with `1 - Phi(c) = beta`.
///
/// Rational approximation with absolute error below 4.5e-4; `beta = 0`
/// maps to `+inf` and `beta = 1` to `-inf`.
pub fn normal_upper_quantile(beta: f64) -> f64 {
    if beta <= 0.0 {
        return f64::INFINITY;
    }
    if beta >= 1.0 {
        return f64::NEG_INFINITY;
    }
    let tail = |p: f64| {
        let t = (-2.0 * p.ln()).sqrt();
        let num = 2.515517 + 0.802853 * t + 0.010328 * t * t;
        let den = 1.0 + 1.432788 * t + 0.189269 * t * t + 0.001308 * t * t * t;
        t - num / den
    };
    if beta == 0.5 {
        0.0
    } else if beta < 0.5 {
        tail(beta)
    } else {
        -tail(1.0 - beta)
    }
}

/// Share threshold of the Gaussian rule, `mu + c * sigma^2` (or
/// `mu + c * sigma` with `use_variance = false`).
pub fn gaussian_threshold(stats: &WindowStats, beta: f64, use_variance: bool) -> f64 {
    let c = normal_upper_quantile(beta);
    let spread = if use_variance {
        stats.variance()
    } else {
        stats.std_dev()
    };
    if spread == 0.0 && c.is_infinite() {
        // c * 0 is undefined; the sign of c still decides
        return if c > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY };
    }
    stats.mean() + c * spread
}

pub fn should_share_gaussian(stats: &WindowStats, td: f64, beta: f64, use_variance: bool) -> bool {
    !stats.is_empty() && td >= gaussian_threshold(stats, beta, use_variance)
}

/// `min(1, beta * count * p^alpha / sum_k p_k^alpha)` with `p = td + epsilon`
/// over the window.
pub fn stochastic_share_probability(stats: &WindowStats, td: f64, beta: f64, alpha: f64, epsilon: f64) -> f64 {
    if stats.is_empty() {
        return 0.0;
    }
    let norm: f64 = stats.values().iter().map(|v| (v + epsilon).powf(alpha)).sum();
    let p = (td + epsilon).powf(alpha);
    (beta * stats.count() as f64 * p / norm).min(1.0)
}

pub fn should_share_stochastic(
    stats: &WindowStats,
    td: f64,
    beta: f64,
    alpha: f64,
    epsilon: f64,
    rng: &mut impl Rng,
) -> bool {
    let p = stochastic_share_probability(stats, td, beta, alpha, epsilon);
    p > 0.0 && rng.gen::<f64>() < p
}
