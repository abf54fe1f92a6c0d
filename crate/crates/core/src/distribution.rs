//! Probability vectors over the five rating levels.

use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::dataset::RatingScale;

pub const LEVELS: usize = RatingScale::LEVELS;

/// A distribution over rating levels 1..=5, stored by zero-based level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distribution(pub [f64; LEVELS]);

impl Distribution {
    pub fn uniform() -> Self {
        Distribution([1.0 / LEVELS as f64; LEVELS])
    }

    /// Point mass on `rating`.
    pub fn indicator(rating: u8) -> Self {
        let mut p = [0.0; LEVELS];
        p[RatingScale::index(rating)] = 1.0;
        Distribution(p)
    }

    /// Normalizes non-negative weights. Returns `None` when the total is zero
    /// or not finite.
    pub fn normalized(weights: [f64; LEVELS]) -> Option<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return None;
        }
        Some(Distribution(weights.map(|w| w / total)))
    }

    /// Normalizes a vector of log-weights by subtracting the maximum before
    /// exponentiating.
    pub fn from_log_weights(logs: [f64; LEVELS]) -> Option<Self> {
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return None;
        }
        Self::normalized(logs.map(|l| (l - max).exp()))
    }

    /// Smoothed histogram: `(count + 1) / sum(count + 1)`.
    pub fn smoothed(counts: [u32; LEVELS]) -> Self {
        let total: f64 = counts.iter().map(|&c| c as f64 + 1.0).sum();
        Distribution(counts.map(|c| (c as f64 + 1.0) / total))
    }

    pub fn probs(&self) -> &[f64; LEVELS] {
        &self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Expected rating `sum_i i * p(i)`.
    pub fn expectation(&self) -> f64 {
        self.0
            .iter()
            .enumerate()
            .map(|(i, p)| RatingScale::value(i) * p)
            .sum()
    }

    /// Expected absolute deviation from `rating`.
    pub fn mean_abs_deviation(&self, rating: u8) -> f64 {
        let r = rating as f64;
        self.0
            .iter()
            .enumerate()
            .map(|(i, p)| (r - RatingScale::value(i)).abs() * p)
            .sum()
    }

    /// True when every entry is finite and non-negative and the entries sum
    /// to one within `tol`.
    pub fn is_normalized(&self, tol: f64) -> bool {
        self.0.iter().all(|p| p.is_finite() && *p >= 0.0) && (self.sum() - 1.0).abs() <= tol
    }

    pub fn max_abs_diff(&self, other: &Distribution) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<usize> for Distribution {
    type Output = f64;

    fn index(&self, level: usize) -> &f64 {
        &self.0[level]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_weights_survive_large_magnitudes() {
        let d = Distribution::from_log_weights([-5000.0, -5001.0, -9000.0, -5000.0, -1e6]).unwrap();
        assert!(d.is_normalized(1e-12));
        assert!((d[0] - d[3]).abs() < 1e-15);
        assert!(d[2] == 0.0);
    }

    #[test]
    fn zero_weights_do_not_normalize() {
        assert!(Distribution::normalized([0.0; LEVELS]).is_none());
        assert!(Distribution::from_log_weights([f64::NEG_INFINITY; LEVELS]).is_none());
    }

    #[test]
    fn expectations() {
        assert_eq!(Distribution::indicator(5).expectation(), 5.0);
        assert!((Distribution::uniform().expectation() - 3.0).abs() < 1e-15);
        assert!((Distribution([0.8, 0.2, 0.0, 0.0, 0.0]).expectation() - 1.2).abs() < 1e-15);
    }
}
