//! Binary sum tree over leaf priorities for proportional sampling.

use serde::{Deserialize, Serialize};

/// Complete binary tree stored as an array; node `i` has children `2i` and
/// `2i + 1`, leaves occupy `[capacity, 2 * capacity)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SumTree {
    capacity: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    /// `leaves` is rounded up to a power of two.
    pub fn new(leaves: usize) -> Self {
        let capacity = leaves.max(1).next_power_of_two();
        SumTree {
            capacity,
            nodes: vec![0.0; 2 * capacity],
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total(&self) -> f64 {
        self.nodes[1.min(self.nodes.len() - 1)]
    }

    pub fn get(&self, leaf: usize) -> f64 {
        self.nodes[self.capacity + leaf]
    }

    pub fn set(&mut self, leaf: usize, value: f64) {
        assert!(leaf < self.capacity, "leaf {leaf} outside tree of {}", self.capacity);
        assert!(value >= 0.0 && value.is_finite(), "priority must be finite and >= 0");
        let mut i = self.capacity + leaf;
        self.nodes[i] = value;
        // recompute rather than add deltas so sums never drift
        while i > 1 {
            i /= 2;
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
    }

    /// Recomputes every internal node from the leaves.
    pub fn rebuild(&mut self) {
        for i in (1..self.capacity).rev() {
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
    }

    /// Leaf whose cumulative interval `[c_i, c_i + p_i)` contains `mass`.
    ///
    /// Masses at or beyond the total clamp to the last positive leaf; zero
    /// leaves are never returned while the total is positive.
    pub fn find(&self, mass: f64) -> usize {
        let mut mass = mass.max(0.0);
        let mut i = 1;
        while i < self.capacity {
            let left = self.nodes[2 * i];
            let right = self.nodes[2 * i + 1];
            if mass < left || right <= 0.0 {
                i *= 2;
            } else {
                mass -= left;
                i = 2 * i + 1;
            }
        }
        i - self.capacity
    }

    /// Largest difference between any internal node and the sum of its children.
    pub fn max_inconsistency(&self) -> f64 {
        (1..self.capacity)
            .map(|i| (self.nodes[i] - (self.nodes[2 * i] + self.nodes[2 * i + 1])).abs())
            .fold(0.0, f64::max)
    }
}
