use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the supernet is trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TrainMode {
    /// `m` paths per step covering every choice once, one deferred update.
    StrictFair,
    /// One uniformly sampled path per batch, immediate update.
    EfUniform,
    /// One uniformly sampled path trained `k` times on the batch, each BP
    /// followed by an immediate update.
    EfKRepeat { k: usize },
    /// Single-path one-shot training; same schedule as `EfUniform`.
    Spos,
}

impl TrainMode {
    /// Parameter updates applied per mini-batch for a space with `m` choices.
    pub fn updates_per_batch(self) -> u64 {
        match self {
            TrainMode::EfKRepeat { k } => k as u64,
            _ => 1,
        }
    }

    /// Back-propagations per mini-batch.
    pub fn bps_per_batch(self, m: usize) -> u64 {
        match self {
            TrainMode::StrictFair => m as u64,
            TrainMode::EfKRepeat { k } => k as u64,
            TrainMode::EfUniform | TrainMode::Spos => 1,
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainMode::StrictFair => f.write_str("strict_fair"),
            TrainMode::EfUniform => f.write_str("ef_uniform"),
            TrainMode::EfKRepeat { k } => write!(f, "ef_krepeat({k})"),
            TrainMode::Spos => f.write_str("spos"),
        }
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    /// Accepts `strict_fair`, `ef_uniform`, `spos` and `ef_krepeat(k)`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config("train.mode", format!("unknown mode `{s}`"));
        match s.trim() {
            "strict_fair" | "strict" => Ok(TrainMode::StrictFair),
            "ef_uniform" | "uniform" => Ok(TrainMode::EfUniform),
            "spos" => Ok(TrainMode::Spos),
            other => {
                let k = other
                    .strip_prefix("ef_krepeat(")
                    .or_else(|| other.strip_prefix("krepeat("))
                    .and_then(|rest| rest.strip_suffix(')'))
                    .ok_or_else(bad)?
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| bad())?;
                if k == 0 {
                    return Err(Error::config("train.mode", "k-repeat needs k >= 1"));
                }
                Ok(TrainMode::EfKRepeat { k })
            }
        }
    }
}

impl Serialize for TrainMode {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for TrainMode {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(deserializer)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Optimization settings shared by supernet and stand-alone training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_mode")]
    pub mode: TrainMode,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr0")]
    pub lr0: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_mode() -> TrainMode {
    TrainMode::StrictFair
}
fn default_epochs() -> usize {
    150
}
fn default_batch_size() -> usize {
    256
}
fn default_lr0() -> f64 {
    0.045
}
fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    4e-5
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: default_mode(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            lr0: default_lr0(),
            momentum: default_momentum(),
            weight_decay: default_weight_decay(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// The k-repeat baseline with its learning rate divided by `k`.
    pub fn krepeat_scaled_lr(&self, k: usize) -> Self {
        TrainConfig {
            mode: TrainMode::EfKRepeat { k },
            lr0: self.lr0 / k as f64,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if !(self.lr0.is_finite() && self.lr0 >= 0.0) {
            return Err(Error::config("train.lr0", "must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("train.momentum", "must lie in [0, 1)"));
        }
        if let TrainMode::EfKRepeat { k: 0 } = self.mode {
            return Err(Error::config("train.mode", "k-repeat needs k >= 1"));
        }
        Ok(())
    }
}
