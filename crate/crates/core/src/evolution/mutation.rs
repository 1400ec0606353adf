use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{PolicyConfig, SearchConfig};
use crate::error::{Error, Result};
use crate::search_space::{Architecture, SearchSpace};

/// Uniform per-layer crossover: every layer is copied from either parent
/// with probability 1/2.
pub fn crossover<R: Rng + ?Sized>(p1: &Architecture, p2: &Architecture, rng: &mut R) -> Result<Architecture> {
    if p1.len() != p2.len() {
        return Err(Error::InvalidArchitecture {
            arch: p2.to_string(),
            reason: format!("parents have {} and {} layers", p1.len(), p2.len()),
        });
    }
    Ok(Architecture::new(
        p1.iter()
            .zip(p2.iter())
            .map(|(a, b)| if rng.random_bool(0.5) { a } else { b })
            .collect(),
    ))
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Factorized categorical policy over the choice of every layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MutatorPolicy {
    pub logits: Vec<Vec<f64>>,
    /// Moving-average reward baseline; unset until the first update.
    pub baseline: Option<f64>,
}

impl MutatorPolicy {
    pub fn uniform(layers: usize, choices: usize) -> Self {
        MutatorPolicy {
            logits: vec![vec![0.0; choices]; layers],
            baseline: None,
        }
    }

    pub fn probabilities(&self, layer: usize) -> Vec<f64> {
        softmax(&self.logits[layer])
    }

    pub fn sample_choice<R: Rng + ?Sized>(&self, layer: usize, rng: &mut R) -> usize {
        let p = self.probabilities(layer);
        WeightedIndex::new(&p).expect("softmax weights are valid").sample(rng)
    }

    /// Probability of drawing every choice of `arch`.
    pub fn probability(&self, arch: &Architecture) -> f64 {
        arch.iter()
            .enumerate()
            .map(|(l, c)| self.probabilities(l)[c])
            .product()
    }
}

/// Diagnostics of one policy update.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyUpdate {
    pub baseline_before: f64,
    /// Probability ratios of the minibatch actions after the update.
    pub ratios: Vec<f64>,
    /// Number of times the step was halved to respect the clip range.
    pub backtracks: usize,
}

/// Clipped-ratio policy gradient on a minibatch of `(arch, reward)` pairs,
/// followed by a moving-average update of the baseline.
///
/// Advantages are rewards minus the baseline. The surrogate
/// `mean(min(r A, clip(r, 1-eps, 1+eps) A))` is climbed by a few gradient
/// steps; if any ratio then lies outside `[1-eps, 1+eps]` the whole step is
/// halved until none does.
pub fn policy_update(policy: &mut MutatorPolicy, batch: &[(Architecture, f64)], config: &PolicyConfig) -> Result<PolicyUpdate> {
    if batch.iter().any(|(_, r)| !r.is_finite()) {
        return Err(Error::InvalidArgument("non-finite reward".into()));
    }
    for (arch, _) in batch {
        if arch.len() != policy.logits.len() || arch.iter().any(|c| c >= policy.logits[0].len()) {
            return Err(Error::InvalidArchitecture {
                arch: arch.to_string(),
                reason: "does not match the policy's shape".into(),
            });
        }
    }
    let mean_reward = if batch.is_empty() {
        0.0
    } else {
        batch.iter().map(|(_, r)| r).sum::<f64>() / batch.len() as f64
    };
    let baseline = *policy.baseline.get_or_insert(mean_reward);
    if batch.is_empty() {
        return Ok(PolicyUpdate {
            baseline_before: baseline,
            ratios: Vec::new(),
            backtracks: 0,
        });
    }

    let eps = config.clip;
    let old_logits = policy.logits.clone();
    let old_prob: Vec<f64> = batch.iter().map(|(a, _)| policy.probability(a)).collect();
    let advantages: Vec<f64> = batch.iter().map(|(_, r)| r - baseline).collect();
    let n = batch.len() as f64;

    for _ in 0..config.iterations {
        let probs: Vec<Vec<f64>> = (0..policy.logits.len()).map(|l| policy.probabilities(l)).collect();
        let mut grad: Vec<Vec<f64>> = probs.iter().map(|p| vec![0.0; p.len()]).collect();
        for (i, (arch, _)) in batch.iter().enumerate() {
            let a = advantages[i];
            let ratio = arch.iter().enumerate().map(|(l, c)| probs[l][c]).product::<f64>() / old_prob[i];
            let clipped = (a > 0.0 && ratio > 1.0 + eps) || (a < 0.0 && ratio < 1.0 - eps);
            if clipped || a == 0.0 {
                continue;
            }
            for (l, c) in arch.iter().enumerate() {
                for (j, g) in grad[l].iter_mut().enumerate() {
                    let indicator = if j == c { 1.0 } else { 0.0 };
                    *g += a * ratio * (indicator - probs[l][j]) / n;
                }
            }
        }
        for (row, g) in policy.logits.iter_mut().zip(&grad) {
            for (v, d) in row.iter_mut().zip(g) {
                *v += config.learning_rate * d;
            }
        }
    }

    let ratios_of = |p: &MutatorPolicy| -> Vec<f64> {
        batch
            .iter()
            .zip(&old_prob)
            .map(|((a, _), &old)| p.probability(a) / old)
            .collect()
    };
    let within = |r: &[f64]| r.iter().all(|&x| x >= 1.0 - eps - 1e-12 && x <= 1.0 + eps + 1e-12);
    let mut ratios = ratios_of(policy);
    let mut backtracks = 0;
    while !within(&ratios) {
        backtracks += 1;
        for (row, old) in policy.logits.iter_mut().zip(&old_logits) {
            for (v, o) in row.iter_mut().zip(old) {
                *v = o + (*v - o) * 0.5;
            }
        }
        if backtracks >= 60 {
            policy.logits = old_logits.clone();
        }
        ratios = ratios_of(policy);
    }

    let beta = config.baseline_decay;
    policy.baseline = Some(beta * baseline + (1.0 - beta) * mean_reward);
    Ok(PolicyUpdate {
        baseline_before: baseline,
        ratios,
        backtracks,
    })
}

/// Running mean reward of every (layer, choice) over evaluated architectures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardHistory {
    sums: Vec<Vec<f64>>,
    counts: Vec<Vec<u64>>,
}

impl RewardHistory {
    pub fn new(layers: usize, choices: usize) -> Self {
        RewardHistory {
            sums: vec![vec![0.0; choices]; layers],
            counts: vec![vec![0; choices]; layers],
        }
    }

    pub fn record(&mut self, arch: &Architecture, reward: f64) {
        for (l, c) in arch.iter().enumerate() {
            self.sums[l][c] += reward;
            self.counts[l][c] += 1;
        }
    }

    pub fn mean(&self, layer: usize, choice: usize) -> Option<f64> {
        let n = self.counts[layer][choice];
        (n > 0).then(|| self.sums[layer][choice] / n as f64)
    }

    /// Roulette weights for `layer`: the mean reward of each choice, with
    /// unseen choices given the layer's overall mean.
    pub fn roulette_weights(&self, layer: usize) -> Vec<f64> {
        let total: u64 = self.counts[layer].iter().sum();
        let fallback = if total == 0 {
            1.0
        } else {
            self.sums[layer].iter().sum::<f64>() / total as f64
        };
        let w: Vec<f64> = (0..self.sums[layer].len())
            .map(|j| self.mean(layer, j).unwrap_or(fallback).max(0.0))
            .collect();
        if w.iter().sum::<f64>() > 0.0 {
            w
        } else {
            vec![1.0; w.len()]
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationBranch {
    Random,
    /// Sampled from the mutation policy.
    Policy,
    /// Roulette over historical mean rewards.
    Roulette,
    /// Biased toward cheap blocks.
    Prior,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mutation {
    pub arch: Architecture,
    pub branch: MutationBranch,
    pub layer: usize,
}

/// Hierarchical mutation of exactly one layer.
///
/// The branch is drawn from `(p_rm, p_re, p_pr)`. The random branch moves
/// the layer to a different choice uniformly. The reinforced branch samples
/// the layer from `policy` with probability `p_m`, otherwise by roulette
/// over `history`. The prior branch samples choices with probability
/// inversely proportional to their parameter count.
pub fn mutate_hierarchical<R: Rng + ?Sized>(
    arch: &Architecture,
    space: &SearchSpace,
    policy: &MutatorPolicy,
    history: &RewardHistory,
    config: &SearchConfig,
    rng: &mut R,
) -> Result<Mutation> {
    config.validate()?;
    space.check_arch(arch)?;
    let m = space.choices();
    let layer = rng.random_range(0..space.num_layers());
    let u: f64 = rng.random();
    let branch = if u < config.p_rm {
        MutationBranch::Random
    } else if u < config.p_rm + config.p_re {
        if rng.random::<f64>() < config.p_m {
            MutationBranch::Policy
        } else {
            MutationBranch::Roulette
        }
    } else {
        MutationBranch::Prior
    };
    let pick = |weights: &[f64], rng: &mut R| -> usize {
        WeightedIndex::new(weights).map_or(0, |w| w.sample(rng))
    };
    let choice = match branch {
        MutationBranch::Random => {
            if m == 1 {
                0
            } else {
                let c = rng.random_range(0..m - 1);
                if c >= arch.choice(layer) {
                    c + 1
                } else {
                    c
                }
            }
        }
        MutationBranch::Policy => policy.sample_choice(layer, rng),
        MutationBranch::Roulette => pick(&history.roulette_weights(layer), rng),
        MutationBranch::Prior => {
            let w: Vec<f64> = (0..m)
                .map(|j| 1.0 / space.block_shape(layer, j).params().max(1) as f64)
                .collect();
            pick(&w, rng)
        }
    };
    let mut out = arch.clone();
    out.set(layer, choice);
    Ok(Mutation {
        arch: out,
        branch,
        layer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::search_space::{Activation, Multiplier};

    fn space() -> SearchSpace {
        let r = |v| Multiplier::integer(v).unwrap();
        SearchSpace::uniform(
            4,
            3,
            vec![8; 6],
            &[
                (r(1), Activation::Relu, false),
                (r(3), Activation::Relu, false),
                (r(6), Activation::Tanh, false),
                (r(2), Activation::Identity, false),
            ],
        )
        .unwrap()
    }

    #[test]
    fn crossover_mixes_parents() {
        let mut rng = seeded(3);
        let a: Architecture = "0,0,0,0,0".parse().unwrap();
        let b: Architecture = "1,1,1,1,1".parse().unwrap();
        assert_eq!(crossover(&a, &a, &mut rng).unwrap(), a);
        let trials = 4000;
        let mut from_a = [0usize; 5];
        for _ in 0..trials {
            let c = crossover(&a, &b, &mut rng).unwrap();
            for (k, v) in c.iter().enumerate() {
                assert!(v == 0 || v == 1);
                from_a[k] += (v == 0) as usize;
            }
        }
        let sigma = (trials as f64 * 0.25).sqrt();
        for f in from_a {
            assert!((f as f64 - trials as f64 / 2.0).abs() < 3.0 * sigma, "{f}");
        }
        assert!(crossover(&a, &"0,1".parse().unwrap(), &mut rng).is_err());
    }

    #[test]
    fn random_branch_changes_one_layer() {
        let s = space();
        let config = SearchConfig {
            p_rm: 1.0,
            p_re: 0.0,
            p_pr: 0.0,
            ..SearchConfig::default()
        };
        let policy = MutatorPolicy::uniform(5, 4);
        let history = RewardHistory::new(5, 4);
        let mut rng = seeded(0);
        let arch: Architecture = "0,1,2,3,0".parse().unwrap();
        for _ in 0..200 {
            let m = mutate_hierarchical(&arch, &s, &policy, &history, &config, &mut rng).unwrap();
            assert_eq!(arch.hamming(&m.arch), 1);
            s.check_arch(&m.arch).unwrap();
        }
    }

    #[test]
    fn degenerate_policy_sets_the_layer() {
        let s = space();
        let config = SearchConfig {
            p_rm: 0.0,
            p_re: 1.0,
            p_pr: 0.0,
            p_m: 1.0,
            p_km: 0.0,
            ..SearchConfig::default()
        };
        let mut policy = MutatorPolicy::uniform(5, 4);
        for row in &mut policy.logits {
            row[2] = 1e3;
        }
        let history = RewardHistory::new(5, 4);
        let mut rng = seeded(0);
        let arch = Architecture::zeros(5);
        for _ in 0..50 {
            let m = mutate_hierarchical(&arch, &s, &policy, &history, &config, &mut rng).unwrap();
            assert_eq!(m.arch.choice(m.layer), 2);
        }
    }

    #[test]
    fn branch_frequencies() {
        let s = space();
        let config = SearchConfig::default();
        let policy = MutatorPolicy::uniform(5, 4);
        let history = RewardHistory::new(5, 4);
        let mut rng = seeded(11);
        let n = 20_000;
        let (mut random, mut reinforced, mut prior) = (0usize, 0usize, 0usize);
        for _ in 0..n {
            match mutate_hierarchical(&Architecture::zeros(5), &s, &policy, &history, &config, &mut rng)
                .unwrap()
                .branch
            {
                MutationBranch::Random => random += 1,
                MutationBranch::Policy | MutationBranch::Roulette => reinforced += 1,
                MutationBranch::Prior => prior += 1,
            }
        }
        for (count, p) in [(random, 0.2), (reinforced, 0.65), (prior, 0.15)] {
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((count as f64 - n as f64 * p).abs() < 3.0 * sigma, "{count} vs {p}");
        }
    }

    #[test]
    fn prior_prefers_cheap_blocks() {
        let s = space();
        let config = SearchConfig {
            p_rm: 0.0,
            p_re: 0.0,
            p_pr: 1.0,
            ..SearchConfig::default()
        };
        let policy = MutatorPolicy::uniform(5, 4);
        let history = RewardHistory::new(5, 4);
        let mut rng = seeded(5);
        let mut counts = [0usize; 4];
        for _ in 0..4000 {
            let m = mutate_hierarchical(&Architecture::zeros(5), &s, &policy, &history, &config, &mut rng).unwrap();
            counts[m.arch.choice(m.layer)] += 1;
        }
        // Hidden multipliers 1, 3, 6, 2.
        assert!(counts[0] > counts[3] && counts[3] > counts[1] && counts[1] > counts[2], "{counts:?}");
    }

    #[test]
    fn roulette_follows_history() {
        let mut h = RewardHistory::new(1, 3);
        assert_eq!(h.roulette_weights(0), vec![1.0; 3]);
        h.record(&"0".parse().unwrap(), 0.9);
        h.record(&"1".parse().unwrap(), 0.1);
        assert_eq!(h.mean(0, 0), Some(0.9));
        let w = h.roulette_weights(0);
        assert_eq!(w[0], 0.9);
        assert!((w[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn equal_rewards_leave_policy_unchanged() {
        let mut p = MutatorPolicy::uniform(3, 4);
        p.baseline = Some(0.5);
        p.logits[1][2] = 0.3;
        let before = p.logits.clone();
        let batch = vec![("0,1,2".parse().unwrap(), 0.5), ("3,3,1".parse().unwrap(), 0.5)];
        policy_update(&mut p, &batch, &PolicyConfig::default()).unwrap();
        assert_eq!(p.logits, before);
        assert_eq!(p.baseline, Some(0.5));
    }

    #[test]
    fn positive_advantage_raises_chosen_probabilities() {
        let mut p = MutatorPolicy::uniform(3, 4);
        p.baseline = Some(0.2);
        let arch: Architecture = "1,3,0".parse().unwrap();
        let before: Vec<f64> = arch.iter().enumerate().map(|(l, c)| p.probabilities(l)[c]).collect();
        let up = policy_update(&mut p, &[(arch.clone(), 0.9)], &PolicyConfig::default()).unwrap();
        for (l, c) in arch.iter().enumerate() {
            assert!(p.probabilities(l)[c] > before[l]);
        }
        assert!(up.ratios[0] > 1.0 && up.ratios[0] <= 1.2 + 1e-12);
        assert!((p.baseline.unwrap() - (0.9 * 0.2 + 0.1 * 0.9)).abs() < 1e-12);
    }

    #[test]
    fn ratios_stay_in_clip_range_under_large_steps() {
        let config = PolicyConfig {
            learning_rate: 50.0,
            iterations: 10,
            ..PolicyConfig::default()
        };
        let mut rng = seeded(2);
        for _ in 0..20 {
            let mut p = MutatorPolicy::uniform(4, 3);
            p.baseline = Some(0.5);
            let batch: Vec<(Architecture, f64)> = (0..8)
                .map(|_| {
                    let a = Architecture::new((0..4).map(|_| rng.random_range(0..3)).collect());
                    (a, rng.random::<f64>())
                })
                .collect();
            let up = policy_update(&mut p, &batch, &config).unwrap();
            assert!(up.ratios.iter().all(|&r| (0.8 - 1e-9..=1.2 + 1e-9).contains(&r)), "{:?}", up.ratios);
        }
    }

    #[test]
    fn first_update_sets_baseline_to_minibatch_mean() {
        let mut p = MutatorPolicy::uniform(1, 2);
        let up = policy_update(&mut p, &[("0".parse().unwrap(), 0.2), ("1".parse().unwrap(), 0.6)], &PolicyConfig::default())
            .unwrap();
        assert!((up.baseline_before - 0.4).abs() < 1e-12);
        assert!(p.probabilities(0)[1] > 0.5);
        assert!(policy_update(&mut p, &[("0".parse().unwrap(), f64::NAN)], &PolicyConfig::default()).is_err());
    }
}
