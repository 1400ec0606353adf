use serde::{Deserialize, Serialize};

use super::counters::{CounterReport, FairnessCounters};
use super::sampling::{sample_strict_step, sample_uniform};
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};
use crate::search_space::SearchSpace;

/// Which sampler drives a counter simulation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    Strict,
    Uniform,
}

/// Update counts after `bps` back-propagations drawn by `sampler`, with no
/// training involved. Strict sampling needs `bps` divisible by `m`.
pub fn simulate_counters(space: &SearchSpace, sampler: Sampler, bps: u64, seed: u64) -> Result<CounterReport> {
    let m = space.choices() as u64;
    let mut rng = stream_rng(seed, &[stream::SAMPLING]);
    let mut counters = FairnessCounters::for_space(space);
    match sampler {
        Sampler::Strict => {
            if !bps.is_multiple_of(m) {
                return Err(Error::InvalidArgument(format!(
                    "strict sampling runs whole steps of {m} paths; {bps} is not a multiple"
                )));
            }
            for _ in 0..bps / m {
                for arch in sample_strict_step(space, &mut rng).models {
                    counters.record(&arch);
                }
            }
        }
        Sampler::Uniform => {
            for _ in 0..bps {
                counters.record(&sample_uniform(space, &mut rng));
            }
        }
    }
    Ok(counters.report())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search_space::{Activation, Multiplier};

    fn space() -> SearchSpace {
        let ops: Vec<_> = (0..3)
            .map(|_| (Multiplier::integer(1).unwrap(), Activation::Relu, false))
            .collect();
        SearchSpace::uniform(2, 2, vec![3; 5], &ops).unwrap()
    }

    #[test]
    fn strict_has_no_spread() {
        let report = simulate_counters(&space(), Sampler::Strict, 300, 4).unwrap();
        assert_eq!(report.total_bp, 300);
        assert_eq!(report.max_variance(), 0.0);
        assert!(simulate_counters(&space(), Sampler::Strict, 301, 4).is_err());
    }

    #[test]
    fn uniform_spreads() {
        let report = simulate_counters(&space(), Sampler::Uniform, 3000, 4).unwrap();
        assert!(report.mean_variance() > 0.0);
        assert_eq!(report.uniform_variance, 3000.0 * 2.0 / 9.0);
    }
}
