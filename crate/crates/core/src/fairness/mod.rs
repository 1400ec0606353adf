//! Sampling regimes and update-count bookkeeping for supernet training.
//!
//! Three regimes are provided:
//!
//! * [`sample_uniform`]: one path per draw, each layer's choice uniform and
//!   independent. Update counts are equal only in expectation.
//! * [`sample_strict_step`]: `m` paths per step built from an independent
//!   uniform permutation per layer, so every choice block is activated exactly
//!   once per step and counts stay exactly equal.
//! * [`KRepeatSchedule`]: a uniformly sampled path repeated `k` times.
//!
//! [`probability`] holds the exact and asymptotic probability that uniform
//! sampling ends with all counts equal.

mod counters;
pub mod probability;
mod sampling;
mod simulate;

pub use counters::{chi_square_uniform, passes_uniformity, CounterReport, FairnessCounters, LayerReport};
pub use probability::{
    equal_count_probability_exact, equal_count_probability_f64, equal_count_probability_ln,
    equal_count_probability_stirling,
};
pub use simulate::{simulate_counters, Sampler};
pub use sampling::{sample_krepeat, sample_strict_step, sample_uniform, KRepeatSchedule, StepSample};
