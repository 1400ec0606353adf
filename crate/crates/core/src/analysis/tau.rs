use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search_space::Architecture;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub arch: Architecture,
    pub oneshot: f64,
    pub standalone: f64,
}

/// One-shot and stand-alone accuracies of the same architectures.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankingPair {
    pub items: Vec<RankedItem>,
}

impl RankingPair {
    pub fn oneshot(&self) -> Vec<f64> {
        self.items.iter().map(|i| i.oneshot).collect()
    }

    pub fn standalone(&self) -> Vec<f64> {
        self.items.iter().map(|i| i.standalone).collect()
    }
}

/// Kendall's tau-a: `(concordant - discordant) / (n(n-1)/2)`. A pair tied in
/// either ranking counts as neither.
pub fn kendall_tau_values(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!("rankings of length {} and {}", x.len(), y.len())));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::InvalidArgument("tau needs at least two items".into()));
    }
    let mut score = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let a = (x[i] - x[j]).partial_cmp(&0.0).map_or(0, |o| o as i64);
            let b = (y[i] - y[j]).partial_cmp(&0.0).map_or(0, |o| o as i64);
            score += a * b;
        }
    }
    Ok(score as f64 / (n * (n - 1) / 2) as f64)
}

pub fn kendall_tau(pair: &RankingPair) -> Result<f64> {
    kendall_tau_values(&pair.oneshot(), &pair.standalone())
}

/// Spread of one-shot versus stand-alone accuracies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyGap {
    /// `max - min` of the one-shot accuracies.
    pub delta_oneshot: f64,
    pub delta_standalone: f64,
    /// `|delta_oneshot - delta_standalone|`.
    pub lambda: f64,
}

pub fn accuracy_range(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("range of an empty list".into()));
    }
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(max - min)
}

pub fn accuracy_gap(oneshot: &[f64], standalone: &[f64]) -> Result<AccuracyGap> {
    let delta_oneshot = accuracy_range(oneshot)?;
    let delta_standalone = accuracy_range(standalone)?;
    Ok(AccuracyGap {
        delta_oneshot,
        delta_standalone,
        lambda: (delta_oneshot - delta_standalone).abs(),
    })
}
