use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::search_space::{Architecture, SearchSpace};

/// Per-choice update counts, one row per layer.
///
/// Every back-propagation touches exactly one choice per layer, so each row
/// sums to `total_bp`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FairnessCounters {
    counts: Vec<Vec<u64>>,
    total_bp: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub counts: Vec<u64>,
    pub mean: f64,
    /// Population variance of the `m` counts.
    pub variance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterReport {
    pub total_bp: u64,
    pub layers: Vec<LayerReport>,
    /// `n (m - 1) / m^2`, the count variance expected under uniform sampling.
    pub uniform_variance: f64,
}

impl CounterReport {
    pub fn max_variance(&self) -> f64 {
        self.layers.iter().map(|l| l.variance).fold(0.0, f64::max)
    }

    pub fn mean_variance(&self) -> f64 {
        if self.layers.is_empty() {
            return 0.0;
        }
        self.layers.iter().map(|l| l.variance).sum::<f64>() / self.layers.len() as f64
    }
}

impl FairnessCounters {
    pub fn new(layers: usize, choices: usize) -> Self {
        FairnessCounters {
            counts: vec![vec![0; choices]; layers],
            total_bp: 0,
        }
    }

    pub fn for_space(space: &SearchSpace) -> Self {
        Self::new(space.num_layers(), space.choices())
    }

    /// Records one back-propagation through `arch`.
    pub fn record(&mut self, arch: &Architecture) {
        debug_assert_eq!(arch.len(), self.counts.len());
        for (row, c) in self.counts.iter_mut().zip(arch.iter()) {
            row[c] += 1;
        }
        self.total_bp += 1;
    }

    /// Adds independently accumulated counts.
    pub fn merge(&mut self, other: &FairnessCounters) -> Result<()> {
        if self.counts.len() != other.counts.len()
            || self.counts.iter().zip(&other.counts).any(|(a, b)| a.len() != b.len())
        {
            return Err(Error::ShapeMismatch("counter grids differ".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.total_bp += other.total_bp;
        Ok(())
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total_bp(&self) -> u64 {
        self.total_bp
    }

    /// True iff every count in the grid is identical.
    pub fn all_equal(&self) -> bool {
        let mut it = self.counts.iter().flatten();
        match it.next() {
            Some(first) => it.all(|c| c == first),
            None => true,
        }
    }

    pub fn report(&self) -> CounterReport {
        let m = self.counts.first().map_or(0, Vec::len);
        let layers = self
            .counts
            .iter()
            .map(|row| {
                let mean = row.iter().sum::<u64>() as f64 / row.len().max(1) as f64;
                let variance =
                    row.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / row.len().max(1) as f64;
                LayerReport {
                    counts: row.clone(),
                    mean,
                    variance,
                }
            })
            .collect();
        let uniform_variance = if m == 0 {
            0.0
        } else {
            self.total_bp as f64 * (m as f64 - 1.0) / (m as f64 * m as f64)
        };
        CounterReport {
            total_bp: self.total_bp,
            layers,
            uniform_variance,
        }
    }
}

/// Pearson chi-square statistic of `counts` against the uniform distribution.
pub fn chi_square_uniform(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    let expected = n as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
}

/// Chi-square goodness-of-fit test for uniformity at significance `alpha`.
pub fn passes_uniformity(counts: &[u64], alpha: f64) -> bool {
    if counts.len() < 2 {
        return true;
    }
    let dist = ChiSquared::new((counts.len() - 1) as f64).expect("positive degrees of freedom");
    chi_square_uniform(counts) <= dist.inverse_cdf(1.0 - alpha)
}
