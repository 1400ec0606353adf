use serde::{Deserialize, Serialize};

use crate::engine::data::Dataset;
use crate::engine::{forward, Batch, Mode, ParamSet};
use crate::error::{Error, Result};
use crate::search_space::{Architecture, SearchSpace};
use crate::supernet::{train_standalone, Supernet, TrainConfig};

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::ShapeMismatch(format!("vectors of length {} and {}", u.len(), v.len())));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector("cosine similarity of a zero vector".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Cosine similarity between the outputs of a layer's choice blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub layer: usize,
    /// One `m x m` matrix per output channel.
    pub channels: Vec<Vec<Vec<f64>>>,
    /// Element-wise mean over channels.
    pub mean: Vec<Vec<f64>>,
}

impl SimilarityReport {
    /// Mean of the off-diagonal entries of the channel-averaged matrix.
    pub fn mean_off_diagonal(&self) -> f64 {
        let m = self.mean.len();
        if m < 2 {
            return 1.0;
        }
        let mut sum = 0.0;
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    sum += self.mean[i][j];
                }
            }
        }
        sum / (m * (m - 1)) as f64
    }
}

/// Builds the report from per-choice layer outputs (`rows x width`,
/// row-major). Channel `c` of choice `i` is the vector of its activations
/// over the rows.
pub fn similarity_from_outputs(layer: usize, outputs: &[Vec<f64>], rows: usize, width: usize) -> Result<SimilarityReport> {
    let m = outputs.len();
    if outputs.iter().any(|o| o.len() != rows * width) {
        return Err(Error::ShapeMismatch("layer outputs disagree in shape".into()));
    }
    let column = |i: usize, c: usize| -> Vec<f64> { (0..rows).map(|r| outputs[i][r * width + c]).collect() };
    let mut channels = Vec::with_capacity(width);
    let mut mean = vec![vec![0.0; m]; m];
    for c in 0..width {
        let cols: Vec<Vec<f64>> = (0..m).map(|i| column(i, c)).collect();
        let mut mat = vec![vec![1.0; m]; m];
        for i in 0..m {
            for j in i + 1..m {
                let s = cosine_similarity(&cols[i], &cols[j])?;
                mat[i][j] = s;
                mat[j][i] = s;
            }
        }
        for i in 0..m {
            for j in 0..m {
                mean[i][j] += mat[i][j] / width as f64;
            }
        }
        channels.push(mat);
    }
    for (i, row) in mean.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    Ok(SimilarityReport { layer, channels, mean })
}

fn layer_output(params: &ParamSet, arch: &Architecture, layer: usize, probe: &Batch) -> Result<Vec<f64>> {
    let cache = forward(params, arch, probe, Mode::Eval)?;
    Ok(cache.layer_output(layer).to_vec())
}

fn check_layer(space: &SearchSpace, layer: usize, prefix: &Architecture) -> Result<()> {
    if layer >= space.num_layers() {
        return Err(Error::InvalidArgument(format!(
            "layer {layer} out of range for {} layers",
            space.num_layers()
        )));
    }
    space.check_arch(prefix)
}

/// Feeds `probe` through the stem and the layers before `layer` along
/// `prefix`, then through each choice block of `layer`, and compares the
/// blocks' outputs channel by channel.
pub fn cross_block_similarity(
    supernet: &Supernet,
    layer: usize,
    probe: &Batch,
    prefix: &Architecture,
) -> Result<SimilarityReport> {
    let space = supernet.space();
    check_layer(space, layer, prefix)?;
    let outputs = (0..space.choices())
        .map(|j| {
            let mut arch = prefix.clone();
            arch.set(layer, j);
            layer_output(supernet.params(), &arch, layer, probe)
        })
        .collect::<Result<Vec<_>>>()?;
    similarity_from_outputs(layer, &outputs, probe.rows(), space.widths()[layer + 1])
}

/// The same comparison for `m` separately trained stand-alone models that
/// differ from `prefix` only at `layer`.
pub fn standalone_block_similarity(
    space: &SearchSpace,
    layer: usize,
    prefix: &Architecture,
    data: &Dataset,
    config: &TrainConfig,
    probe: &Batch,
) -> Result<SimilarityReport> {
    check_layer(space, layer, prefix)?;
    let outputs = (0..space.choices())
        .map(|j| {
            let mut arch = prefix.clone();
            arch.set(layer, j);
            let trained = train_standalone(space, &arch, data, config)?;
            let params = trained.params.expect("standalone training returns parameters");
            layer_output(&params, &arch, layer, probe)
        })
        .collect::<Result<Vec<_>>>()?;
    similarity_from_outputs(layer, &outputs, probe.rows(), space.widths()[layer + 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::InitScheme;
    use crate::rng::seeded;
    use crate::search_space::{Activation, Multiplier};
    use rand::Rng;

    #[test]
    fn cosine_basics() {
        let v = [0.3, -1.2, 2.0];
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert!((cosine_similarity(&v, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroVector(_))));
    }

    fn probe(rows: usize, dim: usize) -> Batch {
        let mut rng = seeded(9);
        let features = (0..rows * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        Batch::new(features, vec![0; rows], dim).unwrap()
    }

    fn space() -> SearchSpace {
        let r = |v| Multiplier::integer(v).unwrap();
        SearchSpace::uniform(
            3,
            2,
            vec![5, 5, 5, 5],
            &[
                (r(2), Activation::Relu, false),
                (r(2), Activation::Relu, false),
                (r(2), Activation::Relu, false),
            ],
        )
        .unwrap()
    }

    #[test]
    fn identical_init_gives_identical_blocks() {
        let net = Supernet::new(space(), 3, 0.9, 0.0, InitScheme::SharedAcrossChoices);
        let report = cross_block_similarity(&net, 1, &probe(64, 3), &Architecture::zeros(3)).unwrap();
        assert_eq!(report.channels.len(), 5);
        for mat in report.channels.iter().chain([&report.mean]) {
            for row in mat {
                for &v in row {
                    assert!((v - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn independent_init_is_symmetric_with_unit_diagonal() {
        let net = Supernet::new(space(), 3, 0.9, 0.0, InitScheme::Independent);
        let report = cross_block_similarity(&net, 2, &probe(64, 3), &Architecture::zeros(3)).unwrap();
        for mat in report.channels.iter().chain([&report.mean]) {
            for i in 0..3 {
                assert!((mat[i][i] - 1.0).abs() < 1e-6);
                for j in 0..3 {
                    assert_eq!(mat[i][j], mat[j][i]);
                    assert!((-1.0..=1.0).contains(&mat[i][j]));
                }
            }
        }
        assert!(report.mean_off_diagonal() < 1.0);
        assert!(cross_block_similarity(&net, 3, &probe(4, 3), &Architecture::zeros(3)).is_err());
    }
}
