//! Whole-experiment configuration, as read from a TOML file.
//!
//! A single global `seed` drives every random stream; it overrides the
//! `seed` fields of the training and search blocks.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::RankingProtocol;
use crate::engine::data::{Dataset, DatasetSpec, SplitFractions};
use crate::error::{Error, Result};
use crate::evolution::SearchConfig;
use crate::search_space::{Activation, Multiplier, OpConfig, SearchSpace, SpaceConfig};
use crate::supernet::{TrainConfig, TrainMode};

/// A dataset spec plus split fractions, written as one TOML table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    #[serde(flatten)]
    pub spec: DatasetSpec,
    #[serde(default)]
    pub fractions: SplitFractions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub n_samples: usize,
    pub k: usize,
    pub bins: usize,
    /// Layer whose choice blocks are compared for similarity.
    pub probe_layer: usize,
    /// Training regimes compared by `rank`.
    pub modes: Vec<TrainMode>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        let p = RankingProtocol::default();
        AnalysisConfig {
            n_samples: p.n_samples,
            k: p.k,
            bins: p.bins,
            probe_layer: 0,
            modes: vec![TrainMode::StrictFair, TrainMode::Spos, TrainMode::EfKRepeat { k: 6 }],
        }
    }
}

impl AnalysisConfig {
    pub fn protocol(&self) -> RankingProtocol {
        RankingProtocol {
            n_samples: self.n_samples,
            k: self.k,
            bins: self.bins,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub space: SpaceConfig,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// The small ranking experiment used throughout the tests: four choices
    /// of very different capacity in each of six residual layers of width
    /// four, trained on three interleaved spirals.
    pub fn toy(seed: u64) -> Self {
        let op = |mult: Multiplier, act| OpConfig { mult, act, bn: false };
        let int = |v| Multiplier::integer(v).expect("positive multiplier");
        let mut cfg = ExperimentConfig {
            seed,
            space: SpaceConfig {
                layers: 6,
                choices: 4,
                widths: vec![4; 7],
                input_dim: 2,
                classes: 3,
                stem: true,
                head: true,
                residual: true,
                ops: vec![vec![
                    op(int(1), Activation::Identity),
                    op(int(1), Activation::Relu),
                    op(int(4), Activation::Relu),
                    op(int(8), Activation::Relu),
                ]],
            },
            dataset: DatasetConfig {
                spec: DatasetSpec::Spirals {
                    n: 3000,
                    classes: 3,
                    turns: 1.0,
                    noise: 0.1,
                },
                fractions: SplitFractions::default(),
            },
            train: TrainConfig {
                epochs: 40,
                batch_size: 64,
                lr0: 0.02,
                ..TrainConfig::default()
            },
            search: SearchConfig {
                population: 64,
                generations: 20,
                ..SearchConfig::default()
            },
            analysis: AnalysisConfig {
                probe_layer: 2,
                ..AnalysisConfig::default()
            },
            output_dir: None,
        };
        cfg.apply_seed();
        cfg
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))?;
        cfg.apply_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let DatasetSpec::File { path: data } = &mut cfg.dataset.spec {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    /// Copies the global seed into every sub-configuration.
    pub fn apply_seed(&mut self) {
        self.train.seed = self.seed;
        self.search.seed = self.seed;
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.apply_seed();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let space = self.search_space()?;
        self.train.validate()?;
        self.search.validate()?;
        if self.analysis.probe_layer >= space.num_layers() {
            return Err(Error::config("analysis.probe_layer", "beyond the last layer"));
        }
        if let DatasetSpec::File { path } = &self.dataset.spec {
            if !path.exists() {
                return Err(Error::config("dataset.path", format!("{} does not exist", path.display())));
            }
        }
        Ok(())
    }

    pub fn search_space(&self) -> Result<SearchSpace> {
        SearchSpace::try_from(&self.space)
    }

    /// Builds the dataset and checks it against the space's input and
    /// output sizes.
    pub fn dataset(&self) -> Result<Dataset> {
        let data = self.dataset.spec.build(self.dataset.fractions, self.seed)?;
        if data.dim() != self.space.input_dim || data.classes() != self.space.classes {
            return Err(Error::config(
                "dataset",
                format!(
                    "dataset has {} features and {} classes, space expects {} and {}",
                    data.dim(),
                    data.classes(),
                    self.space.input_dim,
                    self.space.classes
                ),
            ));
        }
        Ok(data)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("experiment config serializes");
        hex::encode(Sha256::digest(json))
    }
}
