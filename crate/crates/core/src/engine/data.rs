//! Labelled datasets with disjoint train/validation/test splits.
//!
//! Three synthetic generators ship with the crate (Gaussian blobs, two
//! interleaved spirals, and a checkerboard XOR grid) so experiments need no
//! downloads. Datasets can also be stored in a small binary format:
//!
//! ```text
//! magic   b"SFDS"
//! u32     N (rows), d (features), C (classes)       little-endian
//! f32     N * d features, row-major                 little-endian
//! u32     N labels                                  little-endian
//! ```

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

use super::network::Batch;

pub const DATASET_MAGIC: &[u8; 4] = b"SFDS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f32>,
    labels: Vec<u32>,
    dim: usize,
    classes: usize,
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

/// Fractions of rows assigned to train and validation; the rest is test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { train: 0.6, val: 0.2 }
    }
}

impl Dataset {
    /// A dataset whose rows are all in the training split.
    pub fn new(features: Vec<f32>, labels: Vec<u32>, dim: usize, classes: usize) -> Result<Self> {
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} features for {} rows of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y as usize >= classes) {
            return Err(Error::LabelOutOfRange { label: bad, classes });
        }
        let train = (0..labels.len()).collect();
        Ok(Dataset {
            features,
            labels,
            dim,
            classes,
            train,
            val: Vec::new(),
            test: Vec::new(),
        })
    }

    /// Reassigns rows to splits by a seeded shuffle.
    pub fn with_splits(mut self, fractions: SplitFractions, seed: u64) -> Result<Self> {
        let SplitFractions { train, val } = fractions;
        if !(0.0..=1.0).contains(&train) || !(0.0..=1.0).contains(&val) || train + val > 1.0 + 1e-12 {
            return Err(Error::InvalidArgument(format!("bad split fractions {train}/{val}")));
        }
        let n = self.labels.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream_rng(seed, &[stream::SPLIT]));
        let n_train = (train * n as f64).round() as usize;
        let n_val = ((val * n as f64).round() as usize).min(n - n_train);
        self.test = order.split_off(n_train + n_val);
        self.val = order.split_off(n_train);
        self.train = order;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn split(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(&self.features[i * self.dim..(i + 1) * self.dim]);
        }
        Batch {
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            dim: self.dim,
        }
    }

    pub fn split_batch(&self, split: Split) -> Batch {
        self.batch(self.split(split))
    }

    /// `classes` isotropic Gaussian clusters with standard deviation `spread`
    /// around centers drawn from a standard normal scaled by `separation`.
    pub fn blobs(n: usize, dim: usize, classes: usize, separation: f64, spread: f64, seed: u64) -> Result<Self> {
        if classes == 0 || dim == 0 {
            return Err(Error::InvalidArgument("blobs need positive dim and classes".into()));
        }
        let mut rng = stream_rng(seed, &[stream::DATA]);
        let unit = Normal::new(0.0, 1.0).expect("valid normal");
        let centers: Vec<Vec<f64>> = (0..classes)
            .map(|_| (0..dim).map(|_| separation * unit.sample(&mut rng)).collect())
            .collect();
        let mut features = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let y = i % classes;
            features.extend(centers[y].iter().map(|&c| (c + spread * unit.sample(&mut rng)) as f32));
            labels.push(y as u32);
        }
        Self::new(features, labels, dim, classes)
    }

    /// `classes` interleaved spiral arms in the plane with Gaussian jitter.
    pub fn spirals(n: usize, classes: usize, turns: f64, noise: f64, seed: u64) -> Result<Self> {
        if classes == 0 {
            return Err(Error::InvalidArgument("spirals need at least one class".into()));
        }
        let mut rng = stream_rng(seed, &[stream::DATA]);
        let jitter = Normal::new(0.0, noise.max(0.0)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut features = Vec::with_capacity(n * 2);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let y = i % classes;
            let t: f64 = rng.random_range(0.05..1.0);
            let angle = turns * std::f64::consts::TAU * t + std::f64::consts::TAU * y as f64 / classes as f64;
            features.push((t * angle.cos() + jitter.sample(&mut rng)) as f32);
            features.push((t * angle.sin() + jitter.sample(&mut rng)) as f32);
            labels.push(y as u32);
        }
        Self::new(features, labels, 2, classes)
    }

    /// Points uniform on `[-1, 1]^2`, labelled by checkerboard parity of a
    /// `cells x cells` grid, then jittered by Gaussian noise.
    pub fn xor_grid(n: usize, cells: usize, noise: f64, seed: u64) -> Result<Self> {
        if cells == 0 {
            return Err(Error::InvalidArgument("xor grid needs at least one cell".into()));
        }
        let mut rng = stream_rng(seed, &[stream::DATA]);
        let jitter = Normal::new(0.0, noise.max(0.0)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut features = Vec::with_capacity(n * 2);
        let mut labels = Vec::with_capacity(n);
        let cell = |v: f64| (((v + 1.0) / 2.0 * cells as f64) as usize).min(cells - 1);
        for _ in 0..n {
            let x: f64 = rng.random_range(-1.0..1.0);
            let y: f64 = rng.random_range(-1.0..1.0);
            labels.push(((cell(x) + cell(y)) % 2) as u32);
            features.push((x + jitter.sample(&mut rng)) as f32);
            features.push((y + jitter.sample(&mut rng)) as f32);
        }
        Self::new(features, labels, 2, 2)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(DATASET_MAGIC)?;
        for v in [self.len(), self.dim, self.classes] {
            let v = u32::try_from(v).map_err(|_| Error::DatasetFormat("dimension exceeds u32".into()))?;
            w.write_all(&v.to_le_bytes())?;
        }
        for f in &self.features {
            w.write_all(&f.to_le_bytes())?;
        }
        for y in &self.labels {
            w.write_all(&y.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads the binary format; every row lands in the training split.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::DatasetFormat("truncated header".into()))?;
        if &magic != DATASET_MAGIC {
            return Err(Error::DatasetFormat(format!("bad magic {magic:?}")));
        }
        let mut word = [0u8; 4];
        let mut read_u32 = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut word)
                .map_err(|_| Error::DatasetFormat("truncated file".into()))?;
            Ok(u32::from_le_bytes(word))
        };
        let n = read_u32(&mut r)? as usize;
        let dim = read_u32(&mut r)? as usize;
        let classes = read_u32(&mut r)? as usize;
        let features = (0..n * dim)
            .map(|_| read_u32(&mut r).map(f32::from_bits))
            .collect::<Result<Vec<_>>>()?;
        let labels = (0..n).map(|_| read_u32(&mut r)).collect::<Result<Vec<_>>>()?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::DatasetFormat(format!("{} trailing bytes", rest.len())));
        }
        Self::new(features, labels, dim, classes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Train-split mini-batches for one epoch, reshuffled by `rng`.
    pub fn epoch_batches<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Vec<Batch> {
        let mut order = self.train.clone();
        order.shuffle(rng);
        order.chunks(batch_size.max(1)).map(|idx| self.batch(idx)).collect()
    }
}

/// How to obtain a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Blobs {
        n: usize,
        dim: usize,
        classes: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default = "default_spread")]
        spread: f64,
    },
    Spirals {
        n: usize,
        #[serde(default = "default_two")]
        classes: usize,
        #[serde(default = "default_turns")]
        turns: f64,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    XorGrid {
        n: usize,
        #[serde(default = "default_two")]
        cells: usize,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    File {
        path: std::path::PathBuf,
    },
}

fn default_separation() -> f64 {
    2.0
}
fn default_spread() -> f64 {
    1.0
}
fn default_two() -> usize {
    2
}
fn default_turns() -> f64 {
    1.0
}
fn default_noise() -> f64 {
    0.05
}

impl DatasetSpec {
    /// Generates or loads the rows, then splits them with `seed`.
    pub fn build(&self, fractions: SplitFractions, seed: u64) -> Result<Dataset> {
        let data = match self {
            DatasetSpec::Blobs {
                n,
                dim,
                classes,
                separation,
                spread,
            } => Dataset::blobs(*n, *dim, *classes, *separation, *spread, seed)?,
            DatasetSpec::Spirals {
                n,
                classes,
                turns,
                noise,
            } => Dataset::spirals(*n, *classes, *turns, *noise, seed)?,
            DatasetSpec::XorGrid { n, cells, noise } => Dataset::xor_grid(*n, *cells, *noise, seed)?,
            DatasetSpec::File { path } => Dataset::load(path)?,
        };
        data.with_splits(fractions, seed)
    }
}
