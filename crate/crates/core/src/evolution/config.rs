use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Evolutionary search settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Population size `N`; each generation evaluates `N` new architectures.
    pub population: usize,
    pub generations: usize,
    /// Probability that an offspring is produced by mutation rather than
    /// crossover.
    pub mutation_ratio: f64,
    /// Branch probabilities of hierarchical mutation: random, reinforced,
    /// prior.
    pub p_rm: f64,
    pub p_re: f64,
    pub p_pr: f64,
    /// Within the reinforced branch: sample from the policy, or roulette over
    /// historical rewards.
    pub p_m: f64,
    pub p_km: f64,
    /// Number of evenly spaced models selected from the final population.
    pub select_k: usize,
    pub policy: PolicyConfig,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            population: 64,
            generations: 200,
            mutation_ratio: 0.8,
            p_rm: 0.2,
            p_re: 0.65,
            p_pr: 0.15,
            p_m: 0.7,
            p_km: 0.3,
            select_k: 13,
            policy: PolicyConfig::default(),
            seed: 0,
        }
    }
}

/// Clipped policy-gradient settings for the mutation policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub clip: f64,
    pub learning_rate: f64,
    /// Gradient-ascent iterations per minibatch.
    pub iterations: usize,
    /// Decay of the reward baseline's moving average.
    pub baseline_decay: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            clip: 0.2,
            learning_rate: 0.5,
            iterations: 4,
            baseline_decay: 0.9,
        }
    }
}

fn probability(key: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::config(key, format!("{v} is not a probability")))
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::config("search.population", "need at least 2 individuals"));
        }
        if self.generations == 0 {
            return Err(Error::config("search.generations", "must be positive"));
        }
        for (key, v) in [
            ("search.mutation_ratio", self.mutation_ratio),
            ("search.p_rm", self.p_rm),
            ("search.p_re", self.p_re),
            ("search.p_pr", self.p_pr),
            ("search.p_m", self.p_m),
            ("search.p_km", self.p_km),
        ] {
            probability(key, v)?;
        }
        if (self.p_rm + self.p_re + self.p_pr - 1.0).abs() > 1e-9 {
            return Err(Error::config("search.p_rm", "p_rm + p_re + p_pr must equal 1"));
        }
        if (self.p_m + self.p_km - 1.0).abs() > 1e-9 {
            return Err(Error::config("search.p_m", "p_m + p_km must equal 1"));
        }
        let p = &self.policy;
        if !(p.clip > 0.0 && p.clip < 1.0) {
            return Err(Error::config("search.policy.clip", "must lie in (0, 1)"));
        }
        if !(p.learning_rate.is_finite() && p.learning_rate >= 0.0) {
            return Err(Error::config("search.policy.learning_rate", "must be non-negative"));
        }
        probability("search.policy.baseline_decay", p.baseline_decay)
    }

    /// Total evaluations of a full run: `N * G`.
    pub fn evaluation_budget(&self) -> usize {
        self.population * self.generations
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = SearchConfig::default();
        c.validate().unwrap();
        assert_eq!(c.evaluation_budget(), 12_800);
    }

    #[test]
    fn rejects_bad_branch_probabilities() {
        let c = SearchConfig {
            p_rm: 0.5,
            ..SearchConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config { key, .. }) if key == "search.p_rm"));
        let c = SearchConfig {
            p_km: 0.1,
            ..SearchConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn toml_partial_override() {
        let c: SearchConfig = toml::from_str("population = 8\ngenerations = 3\n[policy]\nclip = 0.1\n").unwrap();
        assert_eq!(c.population, 8);
        assert_eq!(c.policy.clip, 0.1);
        assert_eq!(c.policy.iterations, 4);
        assert_eq!(c.p_re, 0.65);
    }
}
