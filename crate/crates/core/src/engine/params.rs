use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded, stream};
use crate::search_space::{Activation, Architecture, SearchSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    Weight,
    Bias,
    BnScale,
    BnShift,
    RunningMean,
    RunningVar,
}

impl TensorKind {
    /// Running statistics are not touched by the optimizer.
    pub fn trainable(self) -> bool {
        !matches!(self, TensorKind::RunningMean | TensorKind::RunningVar)
    }
}

/// A named flat `f32` array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub kind: TensorKind,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    fn filled(name: String, kind: TensorKind, shape: Vec<usize>, value: f32) -> Self {
        let len = shape.iter().product();
        Tensor {
            name,
            kind,
            shape,
            data: vec![value; len],
        }
    }
}

/// Indices of a dense layer's weight (`fan_out x fan_in`, row-major) and bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenseSlot {
    pub weight: usize,
    pub bias: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BnSlot {
    pub scale: usize,
    pub shift: usize,
    pub running_mean: usize,
    pub running_var: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSlot {
    pub fc1: DenseSlot,
    pub bn: Option<BnSlot>,
    pub activation: Activation,
    pub fc2: DenseSlot,
    /// Adds the block input to its output.
    pub residual: bool,
}

/// Where each part of the network lives inside a [`ParamSet`].
///
/// `blocks[l][j]` is `None` when the set does not hold choice `j` of layer
/// `l`, as for a single extracted path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub stem: Option<DenseSlot>,
    pub blocks: Vec<Vec<Option<BlockSlot>>>,
    pub head: Option<DenseSlot>,
}

impl Layout {
    pub fn block(&self, layer: usize, choice: usize) -> Result<&BlockSlot> {
        self.blocks
            .get(layer)
            .and_then(|row| row.get(choice))
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::ShapeMismatch(format!("no parameters for layer {layer} choice {choice}")))
    }
}

/// How choice blocks are initialized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Every (layer, choice) block draws from its own seeded stream.
    #[default]
    Independent,
    /// All choices of a layer share choice 0's stream; blocks of equal shape and
    /// activation start identical. Used to test similarity analysis.
    SharedAcrossChoices,
}

/// All parameters of a network together with their layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    tensors: Vec<Tensor>,
    layout: Layout,
}

const STEM_LABEL: u64 = u64::MAX - 1;
const HEAD_LABEL: u64 = u64::MAX;

/// Gain of the nonlinearity fed by a dense layer; dense layers that feed
/// another linear map use 1.
fn gain(activation: Option<Activation>) -> f64 {
    match activation {
        Some(Activation::Relu) => std::f64::consts::SQRT_2,
        Some(Activation::Tanh) => 5.0 / 3.0,
        Some(Activation::Identity) | None => 1.0,
    }
}

/// Uniform weights with variance `gain^2 / fan_in`.
fn scaled_uniform(tensor: &mut Tensor, fan_in: usize, gain: f64, seed: u64) {
    let bound = gain * (3.0 / fan_in as f64).sqrt();
    let mut rng = seeded(seed);
    for w in &mut tensor.data {
        *w = rng.random_range(-bound..bound) as f32;
    }
}

struct Builder {
    tensors: Vec<Tensor>,
}

impl Builder {
    fn push(&mut self, name: String, kind: TensorKind, shape: Vec<usize>, value: f32) -> usize {
        self.tensors.push(Tensor::filled(name, kind, shape, value));
        self.tensors.len() - 1
    }

    fn dense(&mut self, prefix: &str, fan_in: usize, fan_out: usize, gain: f64, seed: u64) -> DenseSlot {
        let weight = self.push(format!("{prefix}.weight"), TensorKind::Weight, vec![fan_out, fan_in], 0.0);
        scaled_uniform(&mut self.tensors[weight], fan_in, gain, seed);
        let bias = self.push(format!("{prefix}.bias"), TensorKind::Bias, vec![fan_out], 0.0);
        DenseSlot {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }
}

impl ParamSet {
    fn build(space: &SearchSpace, include: impl Fn(usize, usize) -> bool, seed: u64, scheme: InitScheme) -> Self {
        let mut b = Builder { tensors: Vec::new() };
        let stem = space
            .stem_shape()
            .map(|(i, o)| b.dense("stem", i, o, gain(Some(Activation::Relu)), derive_seed(seed, &[stream::INIT, STEM_LABEL])));
        let mut blocks = Vec::with_capacity(space.num_layers());
        // Skip branches start small so the summed variance stays near the input's.
        let residual_scale = 1.0 / (space.num_layers() as f64).sqrt();
        for l in 0..space.num_layers() {
            let mut row = Vec::with_capacity(space.choices());
            for j in 0..space.choices() {
                if !include(l, j) {
                    row.push(None);
                    continue;
                }
                let shape = space.block_shape(l, j);
                let seed_choice = match scheme {
                    InitScheme::Independent => j as u64,
                    InitScheme::SharedAcrossChoices => 0,
                };
                let block_seed = derive_seed(seed, &[stream::INIT, l as u64, seed_choice]);
                let prefix = format!("layer{l}.choice{j}");
                let fc1 = b.dense(&format!("{prefix}.fc1"), shape.d_in, shape.hidden, gain(Some(shape.activation)), derive_seed(block_seed, &[1]));
                let bn = shape.batchnorm.then(|| {
                    let h = shape.hidden;
                    BnSlot {
                        scale: b.push(format!("{prefix}.bn.scale"), TensorKind::BnScale, vec![h], 1.0),
                        shift: b.push(format!("{prefix}.bn.shift"), TensorKind::BnShift, vec![h], 0.0),
                        running_mean: b.push(format!("{prefix}.bn.running_mean"), TensorKind::RunningMean, vec![h], 0.0),
                        running_var: b.push(format!("{prefix}.bn.running_var"), TensorKind::RunningVar, vec![h], 1.0),
                    }
                });
                let fc2_gain = if shape.residual {
                    residual_scale
                } else {
                    gain(None)
                };
                let fc2 = b.dense(&format!("{prefix}.fc2"), shape.hidden, shape.d_out, fc2_gain, derive_seed(block_seed, &[2]));
                row.push(Some(BlockSlot {
                    fc1,
                    bn,
                    activation: shape.activation,
                    fc2,
                    residual: shape.residual,
                }));
            }
            blocks.push(row);
        }
        let head = space
            .head_shape()
            .map(|(i, o)| b.dense("head", i, o, gain(None), derive_seed(seed, &[stream::INIT, HEAD_LABEL])));
        ParamSet {
            tensors: b.tensors,
            layout: Layout { stem, blocks, head },
        }
    }

    /// Parameters for every choice block of `space` plus stem and head.
    pub fn init_supernet(space: &SearchSpace, seed: u64, scheme: InitScheme) -> Self {
        Self::build(space, |_, _| true, seed, scheme)
    }

    /// Parameters for the single path `arch`. Blocks start from the same
    /// draws the supernet would give them under the same seed.
    pub fn init_path(space: &SearchSpace, arch: &Architecture, seed: u64) -> Result<Self> {
        space.check_arch(arch)?;
        Ok(Self::build(space, |l, j| arch.choice(l) == j, seed, InitScheme::Independent))
    }

    /// Rebuilds a set from stored tensors, checking names, kinds and shapes
    /// against what `space` (restricted to `arch`, if given) expects.
    pub fn from_tensors(space: &SearchSpace, arch: Option<&Architecture>, tensors: Vec<Tensor>) -> Result<Self> {
        let mut expected = match arch {
            Some(a) => Self::init_path(space, a, 0)?,
            None => Self::init_supernet(space, 0, InitScheme::Independent),
        };
        if expected.tensors.len() != tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.tensors.len(),
                tensors.len()
            )));
        }
        for (want, got) in expected.tensors.iter_mut().zip(tensors) {
            if want.name != got.name || want.kind != got.kind || want.shape != got.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` {:?} does not match expected `{}` {:?}",
                    got.name, got.shape, want.name, want.shape
                )));
            }
            if got.data.len() != want.data.len() {
                return Err(Error::Checkpoint(format!("tensor `{}` has wrong length", got.name)));
            }
            *want = got;
        }
        Ok(expected)
    }

    /// Copies the stem, head and the blocks on `arch` into a path-only set.
    pub fn extract_path(&self, space: &SearchSpace, arch: &Architecture) -> Result<Self> {
        let mut out = Self::init_path(space, arch, 0)?;
        for t in &mut out.tensors {
            let src = self
                .tensors
                .iter()
                .find(|s| s.name == t.name)
                .ok_or_else(|| Error::ShapeMismatch(format!("missing tensor `{}`", t.name)))?;
            t.data.clone_from(&src.data);
        }
        Ok(out)
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensor(&self, index: usize) -> &Tensor {
        &self.tensors[index]
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.tensors[index]
    }

    pub fn find(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count, running statistics included.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Tensor indices used by `arch`: stem, one block per layer, head.
    pub fn path_tensors(&self, arch: &Architecture) -> Result<Vec<usize>> {
        let dense = |d: &DenseSlot| [d.weight, d.bias];
        let mut out = Vec::new();
        if let Some(s) = &self.layout.stem {
            out.extend(dense(s));
        }
        for (l, c) in arch.iter().enumerate() {
            let block = self.layout.block(l, c)?;
            out.extend(dense(&block.fc1));
            if let Some(bn) = &block.bn {
                out.extend([bn.scale, bn.shift, bn.running_mean, bn.running_var]);
            }
            out.extend(dense(&block.fc2));
        }
        if let Some(h) = &self.layout.head {
            out.extend(dense(h));
        }
        Ok(out)
    }
}

/// Gradient accumulator shaped like a [`ParamSet`]. Untouched tensors stay
/// `None` so the optimizer can skip them.
#[derive(Clone, Debug, PartialEq)]
pub struct GradBuffer {
    grads: Vec<Option<Vec<f64>>>,
    count: usize,
}

impl GradBuffer {
    pub fn zeros_like(params: &ParamSet) -> Self {
        GradBuffer {
            grads: vec![None; params.len()],
            count: 0,
        }
    }

    /// Number of backward passes accumulated.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn grad(&self, index: usize) -> Option<&[f64]> {
        self.grads[index].as_deref()
    }

    pub fn is_touched(&self, index: usize) -> bool {
        self.grads[index].is_some()
    }

    /// Adds one backward pass's gradients.
    pub fn accumulate(&mut self, path: &super::PathGrad) {
        for (index, g) in &path.grads {
            match &mut self.grads[*index] {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g.clone()),
            }
        }
        self.count += 1;
    }

    /// Multiplies every accumulated gradient by `factor`.
    pub fn scale(&mut self, factor: f64) {
        self.grads.iter_mut().flatten().flatten().for_each(|g| *g *= factor);
    }

    pub fn iter_touched(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_deref().map(|g| (i, g)))
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().flatten().all(|g| g.is_finite())
    }
}
