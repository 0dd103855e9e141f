//! Fenwick-tree prefix sums over nonnegative weights.

use crate::error::{Error, Result};

/// Prefix-sum index supporting `O(log n)` point updates, prefix queries and
/// inverse-CDF draws.
///
/// Point updates are applied as deltas. Rounding drift is bounded by
/// rebuilding the tree from the stored weights once every `len` updates,
/// which keeps updates amortised `O(log n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeIndex {
    weights: Vec<f64>,
    // 1-based Fenwick array; tree[0] unused.
    tree: Vec<f64>,
    updates_since_rebuild: usize,
}

impl CumulativeIndex {
    /// Panics if any weight is negative or non-finite.
    pub fn new(weights: Vec<f64>) -> Self {
        assert!(
            weights.iter().all(|w| w.is_finite() && *w >= 0.0),
            "weights must be finite and nonnegative"
        );
        let mut idx = Self {
            tree: Vec::new(),
            weights,
            updates_since_rebuild: 0,
        };
        idx.rebuild();
        idx
    }

    pub fn rebuild(&mut self) {
        let n = self.weights.len();
        self.tree.clear();
        self.tree.push(0.0);
        self.tree.extend_from_slice(&self.weights);
        for i in 1..=n {
            let parent = i + lowbit(i);
            if parent <= n {
                self.tree[parent] += self.tree[i];
            }
        }
        self.updates_since_rebuild = 0;
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Overwrites the weight at `i`.
    pub fn set(&mut self, i: usize, weight: f64) {
        assert!(weight.is_finite() && weight >= 0.0, "invalid weight {weight}");
        let delta = weight - self.weights[i];
        self.weights[i] = weight;
        if delta == 0.0 {
            return;
        }
        self.updates_since_rebuild += 1;
        if self.updates_since_rebuild >= self.weights.len() {
            self.rebuild();
            return;
        }
        let mut j = i + 1;
        while j < self.tree.len() {
            self.tree[j] += delta;
            j += lowbit(j);
        }
    }

    /// Sum of `weights[0..=i]`.
    pub fn prefix_sum(&self, i: usize) -> f64 {
        assert!(i < self.len(), "prefix index {i} out of range");
        let mut j = i + 1;
        let mut sum = 0.0;
        while j > 0 {
            sum += self.tree[j];
            j -= lowbit(j);
        }
        sum
    }

    pub fn total(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.prefix_sum(self.len() - 1)
        }
    }

    /// Smallest index whose inclusive prefix sum exceeds `u`.
    pub fn sample(&self, u: f64) -> Result<usize> {
        let total = self.total();
        if total <= 0.0 {
            return Err(Error::domain("cannot sample from zero total weight"));
        }
        if !(u >= 0.0 && u < total) {
            return Err(Error::domain(format!("variate {u} outside [0, {total})")));
        }
        let n = self.len();
        let mut pos = 0;
        let mut rem = u;
        let mut step = if n == 0 { 0 } else { 1 << (usize::BITS - 1 - n.leading_zeros()) };
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= rem {
                pos = next;
                rem -= self.tree[next];
            }
            step >>= 1;
        }
        // Rounding in the tree can land on an exhausted slot or run off the
        // end; settle on the nearest slot that still has weight.
        if pos < n && self.weights[pos] > 0.0 {
            return Ok(pos);
        }
        let start = pos.min(n - 1);
        (start..n)
            .chain((0..start).rev())
            .find(|&i| self.weights[i] > 0.0)
            .ok_or_else(|| Error::domain("cannot sample from zero total weight"))
    }
}

/// Draw from `index` at variate `u`; see [`CumulativeIndex::sample`].
pub fn cumulative_sample(index: &CumulativeIndex, u: f64) -> Result<usize> {
    index.sample(u)
}

#[inline]
fn lowbit(i: usize) -> usize {
    i & i.wrapping_neg()
}
