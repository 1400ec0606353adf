use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::histogram::{oneshot_accuracies, sample_architectures, Histogram};
use super::tau::{accuracy_gap, accuracy_range, kendall_tau, AccuracyGap, RankedItem, RankingPair};
use crate::engine::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::search_space::{Architecture, SearchSpace};
use crate::supernet::{train_standalone, train_supernet, Supernet, TrainConfig, TrainMode};

/// `k` indices spread evenly over `0..n`, always including both ends:
/// index `i` maps to `round(i (n-1) / (k-1))`. All of `0..n` when `k >= n`.
pub fn evenly_spaced_indices(n: usize, k: usize) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    match k {
        0 => Vec::new(),
        1 => vec![(n - 1) / 2],
        _ => (0..k)
            .map(|i| ((i * (n - 1)) as f64 / (k - 1) as f64).round() as usize)
            .collect(),
    }
}

/// Settings of a ranking comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankingProtocol {
    /// Architectures scored by every supernet.
    pub n_samples: usize,
    /// Evenly spaced architectures trained stand-alone per method.
    pub k: usize,
    pub bins: usize,
}

impl Default for RankingProtocol {
    fn default() -> Self {
        RankingProtocol {
            n_samples: 200,
            k: 13,
            bins: 20,
        }
    }
}

/// Ranking fidelity of one supernet training regime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRanking {
    pub mode: TrainMode,
    pub tau: f64,
    /// Range of one-shot accuracy over all sampled architectures.
    pub delta_oneshot: f64,
    /// Ranges over the selected architectures only.
    pub gap: AccuracyGap,
    pub pair: RankingPair,
    pub histogram: Histogram,
}

/// Stand-alone test accuracies keyed by architecture.
pub type StandaloneCache = BTreeMap<Architecture, f64>;

/// Trains every architecture in `archs` missing from `cache`, in parallel.
pub fn fill_standalone_cache(
    space: &SearchSpace,
    archs: &[Architecture],
    data: &Dataset,
    config: &TrainConfig,
    cache: &mut StandaloneCache,
) -> Result<()> {
    let mut missing: Vec<Architecture> = archs.iter().filter(|a| !cache.contains_key(*a)).cloned().collect();
    missing.sort();
    missing.dedup();
    let results: Vec<(Architecture, f64)> = missing
        .into_par_iter()
        .map(|a| train_standalone(space, &a, data, config).map(|r| (a, r.test_accuracy)))
        .collect::<Result<_>>()?;
    cache.extend(results);
    Ok(())
}

/// Ranks the sampled architectures by one-shot accuracy under `supernet`,
/// picks `k` evenly spaced ones, and compares with stand-alone accuracy.
pub fn rank_supernet(
    supernet: &Supernet,
    mode: TrainMode,
    samples: &[Architecture],
    data: &Dataset,
    standalone: &TrainConfig,
    protocol: &RankingProtocol,
    cache: &mut StandaloneCache,
) -> Result<MethodRanking> {
    let val = data.split_batch(Split::Val);
    let accs = oneshot_accuracies(supernet, samples, &val)?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| accs[a].total_cmp(&accs[b]).then_with(|| samples[a].cmp(&samples[b])));
    let chosen: Vec<usize> = evenly_spaced_indices(order.len(), protocol.k)
        .into_iter()
        .map(|i| order[i])
        .collect();
    let archs: Vec<Architecture> = chosen.iter().map(|&i| samples[i].clone()).collect();
    fill_standalone_cache(supernet.space(), &archs, data, standalone, cache)?;
    let pair = RankingPair {
        items: chosen
            .iter()
            .map(|&i| RankedItem {
                arch: samples[i].clone(),
                oneshot: accs[i],
                standalone: cache[&samples[i]],
            })
            .collect(),
    };
    Ok(MethodRanking {
        mode,
        tau: kendall_tau(&pair)?,
        delta_oneshot: accuracy_range(&accs)?,
        gap: accuracy_gap(&pair.oneshot(), &pair.standalone())?,
        histogram: Histogram::from_values(&accs, protocol.bins)?,
        pair,
    })
}

/// Trains one supernet per mode with the same data, epochs and seed, then
/// ranks each on the same sampled architectures. Stand-alone models use
/// `config` with its mode ignored and are shared through `cache`.
pub fn compare_methods(
    space: &SearchSpace,
    data: &Dataset,
    config: &TrainConfig,
    modes: &[TrainMode],
    protocol: &RankingProtocol,
    cache: &mut StandaloneCache,
) -> Result<Vec<(Supernet, MethodRanking)>> {
    if protocol.n_samples < 2 || protocol.k < 2 {
        return Err(Error::config("analysis.n_samples", "need at least two samples and k >= 2"));
    }
    let samples = sample_architectures(space, protocol.n_samples, config.seed);
    let mut out = Vec::with_capacity(modes.len());
    for &mode in modes {
        let cfg = TrainConfig {
            mode,
            ..config.clone()
        };
        let (net, _) = train_supernet(space.clone(), data, &cfg)?;
        let ranking = rank_supernet(&net, mode, &samples, data, config, protocol, cache)?;
        out.push((net, ranking));
    }
    Ok(out)
}
