use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::Batch;
use crate::error::{Error, Result};
use crate::fairness::sample_uniform;
use crate::rng::{stream, stream_rng};
use crate::search_space::{Architecture, SearchSpace};
use crate::supernet::Supernet;

/// Equal-width bins over `[min, max]` of the data; the last bin is closed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Histogram {
    pub fn from_values(values: &[f64], bins: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("histogram of no values".into()));
        }
        if bins == 0 {
            return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
        }
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let width = (max - min) / bins as f64;
        let edges = (0..=bins).map(|i| min + width * i as f64).collect();
        let mut counts = vec![0u64; bins];
        for &v in values {
            let b = if width > 0.0 {
                (((v - min) / width) as usize).min(bins - 1)
            } else {
                0
            };
            counts[b] += 1;
        }
        Ok(Histogram {
            edges,
            counts,
            min,
            max,
            mean,
            std,
        })
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }
}

/// One-shot accuracies of uniformly sampled architectures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneShotSample {
    pub archs: Vec<Architecture>,
    pub accuracies: Vec<f64>,
    pub histogram: Histogram,
}

/// `n` architectures drawn uniformly (with replacement) from the analysis
/// stream of `seed`.
pub fn sample_architectures(space: &SearchSpace, n: usize, seed: u64) -> Vec<Architecture> {
    let mut rng = stream_rng(seed, &[stream::ANALYSIS]);
    (0..n).map(|_| sample_uniform(space, &mut rng)).collect()
}

/// Evaluates `archs` with inherited weights, in parallel.
pub fn oneshot_accuracies(supernet: &Supernet, archs: &[Architecture], data: &Batch) -> Result<Vec<f64>> {
    archs.par_iter().map(|a| supernet.evaluate_submodel(a, data)).collect()
}

pub fn oneshot_histogram(supernet: &Supernet, data: &Batch, n_samples: usize, bins: usize, seed: u64) -> Result<OneShotSample> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be positive".into()));
    }
    let archs = sample_architectures(supernet.space(), n_samples, seed);
    let accuracies = oneshot_accuracies(supernet, &archs, data)?;
    let histogram = Histogram::from_values(&accuracies, bins)?;
    Ok(OneShotSample {
        archs,
        accuracies,
        histogram,
    })
}
