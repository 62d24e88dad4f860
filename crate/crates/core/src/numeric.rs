//! Order-fixed reductions.
//!
//! Every reduction here combines its inputs in a fixed binary tree over the
//! slice order, so results do not depend on how the per-item values were
//! produced (sequentially or across threads).

use serde::{Deserialize, Serialize};

/// Pairwise (cascade) summation over the slice order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 8;
    if values.len() <= LEAF {
        return values.iter().fold(0.0, |acc, v| acc + v);
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(pairwise_sum(values) / values.len() as f64)
    }
}

/// Population variance around the pairwise mean.
pub fn population_variance(values: &[f64]) -> Option<f64> {
    let mu = mean(values)?;
    let sq: Vec<f64> = values.iter().map(|v| (v - mu) * (v - mu)).collect();
    Some(pairwise_sum(&sq) / values.len() as f64)
}

/// Count, mean and sum of squared deviations of a population.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    /// Two-pass moments of one block of values.
    pub fn from_values(values: impl Iterator<Item = f64> + Clone) -> Self {
        let (count, sum) = values.clone().fold((0u64, 0.0f64), |(n, s), v| (n + 1, s + v));
        if count == 0 {
            return Moments::default();
        }
        let mean = sum / count as f64;
        let m2 = values.map(|v| (v - mean) * (v - mean)).sum();
        Moments { count, mean, m2 }
    }

    /// Chan et al. combination of two disjoint populations.
    pub fn merge(self, other: Moments) -> Moments {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let n = self.count + other.count;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.count as f64 / n as f64;
        let m2 = self.m2
            + other.m2
            + delta * delta * (self.count as f64) * (other.count as f64) / n as f64;
        Moments { count: n, mean, m2 }
    }

    /// Merges blocks in a balanced tree over slice order.
    pub fn merge_all(blocks: &[Moments]) -> Moments {
        match blocks.len() {
            0 => Moments::default(),
            1 => blocks[0],
            n => {
                let mid = n / 2;
                Self::merge_all(&blocks[..mid]).merge(Self::merge_all(&blocks[mid..]))
            }
        }
    }

    pub fn population_variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.m2 / self.count as f64
        }
    }

    pub fn population_std(&self) -> f64 {
        self.population_variance().sqrt()
    }
}
