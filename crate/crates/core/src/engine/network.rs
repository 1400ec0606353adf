use crate::error::{Error, Result};
use crate::search_space::{Activation, Architecture};

use super::params::{BlockSlot, DenseSlot, ParamSet};

pub const BN_EPS: f64 = 1e-5;
/// Weight of the newest batch in batch-norm running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

/// Row-major features with their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub features: Vec<f32>,
    pub labels: Vec<u32>,
    pub dim: usize,
}

impl Batch {
    pub fn new(features: Vec<f32>, labels: Vec<u32>, dim: usize) -> Result<Self> {
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} features for {} labels of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        Ok(Batch { features, labels, dim })
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    /// Rows `range` as a new batch.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Batch {
        Batch {
            features: self.features[range.start * self.dim..range.end * self.dim].to_vec(),
            labels: self.labels[range].to_vec(),
            dim: self.dim,
        }
    }

    /// The batch repeated `times` times.
    pub fn repeated(&self, times: usize) -> Batch {
        Batch {
            features: self.features.repeat(times),
            labels: self.labels.repeat(times),
            dim: self.dim,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch-norm normalizes with batch statistics.
    Train,
    /// Batch-norm normalizes with running statistics.
    Eval,
}

fn linear(x: &[f64], rows: usize, params: &ParamSet, d: &DenseSlot) -> Vec<f64> {
    let w = &params.tensor(d.weight).data;
    let b = &params.tensor(d.bias).data;
    let mut out = vec![0.0; rows * d.fan_out];
    for r in 0..rows {
        let xr = &x[r * d.fan_in..(r + 1) * d.fan_in];
        for o in 0..d.fan_out {
            let wo = &w[o * d.fan_in..(o + 1) * d.fan_in];
            let dot: f64 = xr.iter().zip(wo).map(|(&a, &b)| a * b as f64).sum();
            out[r * d.fan_out + o] = dot + b[o] as f64;
        }
    }
    out
}

/// Returns `(dW, db, dx)`; `dx` is skipped when `need_input_grad` is false.
fn linear_backward(
    x: &[f64],
    dout: &[f64],
    rows: usize,
    params: &ParamSet,
    d: &DenseSlot,
    need_input_grad: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let w = &params.tensor(d.weight).data;
    let mut dw = vec![0.0; d.fan_out * d.fan_in];
    let mut db = vec![0.0; d.fan_out];
    for r in 0..rows {
        let xr = &x[r * d.fan_in..(r + 1) * d.fan_in];
        for o in 0..d.fan_out {
            let g = dout[r * d.fan_out + o];
            db[o] += g;
            dw[o * d.fan_in..(o + 1) * d.fan_in]
                .iter_mut()
                .zip(xr)
                .for_each(|(acc, &xi)| *acc += g * xi);
        }
    }
    let mut dx = Vec::new();
    if need_input_grad {
        dx = vec![0.0; rows * d.fan_in];
        for r in 0..rows {
            let dxr = &mut dx[r * d.fan_in..(r + 1) * d.fan_in];
            for o in 0..d.fan_out {
                let g = dout[r * d.fan_out + o];
                let wo = &w[o * d.fan_in..(o + 1) * d.fan_in];
                dxr.iter_mut().zip(wo).for_each(|(acc, &wi)| *acc += g * wi as f64);
            }
        }
    }
    (dw, db, dx)
}

#[derive(Clone, Debug)]
struct BnCache {
    normalized: Vec<f64>,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
}

#[derive(Clone, Debug)]
struct BlockCache {
    slot: BlockSlot,
    input: Vec<f64>,
    bn: Option<BnCache>,
    pre_activation: Vec<f64>,
    hidden: Vec<f64>,
}

/// Intermediate values of one forward pass, sufficient for exact backprop.
#[derive(Clone, Debug)]
pub struct ForwardCache<'a> {
    params: &'a ParamSet,
    rows: usize,
    mode: Mode,
    input: Vec<f64>,
    stem_pre: Option<Vec<f64>>,
    blocks: Vec<BlockCache>,
    head_input: Vec<f64>,
    logits: Vec<f64>,
    classes: usize,
}

impl ForwardCache<'_> {
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Number of choice blocks executed (one per layer).
    pub fn path_length(&self) -> usize {
        self.blocks.len()
    }

    /// Output of searchable layer `layer` (input of the next one).
    pub fn layer_output(&self, layer: usize) -> &[f64] {
        match self.blocks.get(layer + 1) {
            Some(next) => &next.input,
            None => &self.head_input,
        }
    }

    /// Predicted class per row; ties go to the lowest index.
    pub fn predictions(&self) -> Vec<usize> {
        self.logits
            .chunks(self.classes)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect()
    }
}

fn batchnorm_train(z: &[f64], rows: usize, width: usize) -> BnCache {
    let mut mean = vec![0.0; width];
    let mut var = vec![0.0; width];
    for r in 0..rows {
        for (j, m) in mean.iter_mut().enumerate() {
            *m += z[r * width + j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    for r in 0..rows {
        for j in 0..width {
            var[j] += (z[r * width + j] - mean[j]).powi(2);
        }
    }
    var.iter_mut().for_each(|v| *v /= rows as f64);
    normalize(z, rows, width, mean, var)
}

fn normalize(z: &[f64], rows: usize, width: usize, mean: Vec<f64>, var: Vec<f64>) -> BnCache {
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut normalized = vec![0.0; rows * width];
    for r in 0..rows {
        for j in 0..width {
            normalized[r * width + j] = (z[r * width + j] - mean[j]) * inv_std[j];
        }
    }
    BnCache {
        normalized,
        inv_std,
        batch_mean: mean,
        batch_var: var,
    }
}

/// Runs `batch` through the path `arch`.
pub fn forward<'a>(params: &'a ParamSet, arch: &Architecture, batch: &Batch, mode: Mode) -> Result<ForwardCache<'a>> {
    let layout = params.layout();
    let rows = batch.rows();
    if arch.len() != layout.blocks.len() {
        return Err(Error::ShapeMismatch(format!(
            "architecture has {} layers, network has {}",
            arch.len(),
            layout.blocks.len()
        )));
    }
    let expected_dim = match (&layout.stem, layout.blocks.first()) {
        (Some(stem), _) => stem.fan_in,
        (None, Some(_)) => layout.block(0, arch.choice(0))?.fc1.fan_in,
        (None, None) => layout.head.map_or(batch.dim, |h| h.fan_in),
    };
    if batch.dim != expected_dim {
        return Err(Error::ShapeMismatch(format!(
            "batch feature dimension {} does not match network input {expected_dim}",
            batch.dim
        )));
    }
    let input: Vec<f64> = batch.features.iter().map(|&v| v as f64).collect();

    let (mut x, stem_pre) = match &layout.stem {
        Some(stem) => {
            let pre = linear(&input, rows, params, stem);
            (pre.iter().map(|&v| v.max(0.0)).collect::<Vec<_>>(), Some(pre))
        }
        None => (input.clone(), None),
    };

    let mut blocks = Vec::with_capacity(arch.len());
    for (l, c) in arch.iter().enumerate() {
        let slot = *layout.block(l, c)?;
        let z1 = linear(&x, rows, params, &slot.fc1);
        let width = slot.fc1.fan_out;
        let (bn, pre_activation) = match &slot.bn {
            Some(bn) => {
                let cache = match mode {
                    Mode::Train => batchnorm_train(&z1, rows, width),
                    Mode::Eval => {
                        let mean = params.tensor(bn.running_mean).data.iter().map(|&v| v as f64).collect();
                        let var = params.tensor(bn.running_var).data.iter().map(|&v| v as f64).collect();
                        normalize(&z1, rows, width, mean, var)
                    }
                };
                let scale = &params.tensor(bn.scale).data;
                let shift = &params.tensor(bn.shift).data;
                let pre = cache
                    .normalized
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| v * scale[i % width] as f64 + shift[i % width] as f64)
                    .collect();
                (Some(cache), pre)
            }
            None => (None, z1),
        };
        let hidden: Vec<f64> = pre_activation.iter().map(|&v| slot.activation.apply(v)).collect();
        let mut out = linear(&hidden, rows, params, &slot.fc2);
        if slot.residual {
            out.iter_mut().zip(&x).for_each(|(o, &xi)| *o += xi);
        }
        blocks.push(BlockCache {
            slot,
            input: std::mem::replace(&mut x, out),
            bn,
            pre_activation,
            hidden,
        });
    }

    let (logits, classes) = match &layout.head {
        Some(head) => (linear(&x, rows, params, head), head.fan_out),
        None => {
            let classes = x.len().checked_div(rows).unwrap_or(0);
            (x.clone(), classes)
        }
    };
    Ok(ForwardCache {
        params,
        rows,
        mode,
        input,
        stem_pre,
        blocks,
        head_input: x,
        logits,
        classes,
    })
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &[f64], labels: &[u32], classes: usize) -> Result<(f64, Vec<f64>)> {
    let rows = labels.len();
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        if y as usize >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        let row = &logits[r * classes..(r + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let log_sum = max + sum.ln();
        loss += log_sum - row[y as usize];
        for (c, g) in grad[r * classes..(r + 1) * classes].iter_mut().enumerate() {
            let p = (row[c] - log_sum).exp();
            *g = (p - if c == y as usize { 1.0 } else { 0.0 }) / rows as f64;
        }
    }
    Ok((loss / rows.max(1) as f64, grad))
}

/// Gradients of one backward pass, keyed by tensor index, plus the batch
/// statistics observed by train-mode batch-norm layers.
#[derive(Clone, Debug, PartialEq)]
pub struct PathGrad {
    pub loss: f64,
    pub grads: Vec<(usize, Vec<f64>)>,
    /// `(running_mean index, running_var index, batch mean, batch variance)`.
    pub bn_stats: Vec<(usize, usize, Vec<f64>, Vec<f64>)>,
}

impl PathGrad {
    pub fn all_finite(&self) -> bool {
        self.loss.is_finite() && self.grads.iter().all(|(_, g)| g.iter().all(|v| v.is_finite()))
    }

    pub fn grad(&self, index: usize) -> Option<&[f64]> {
        self.grads.iter().find(|(i, _)| *i == index).map(|(_, g)| g.as_slice())
    }
}

/// Exact gradients of the mean cross-entropy of the cached forward pass.
pub fn backward(cache: &ForwardCache<'_>, labels: &[u32]) -> Result<PathGrad> {
    if labels.len() != cache.rows {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for a batch of {}",
            labels.len(),
            cache.rows
        )));
    }
    let params = cache.params;
    let layout = params.layout();
    let rows = cache.rows;
    let (loss, mut upstream) = softmax_cross_entropy(&cache.logits, labels, cache.classes)?;
    let mut grads = Vec::new();
    let mut bn_stats = Vec::new();

    let has_lower = |depth: usize| depth > 0 || layout.stem.is_some();

    if let Some(head) = &layout.head {
        let (dw, db, dx) = linear_backward(&cache.head_input, &upstream, rows, params, head, true);
        grads.push((head.bias, db));
        grads.push((head.weight, dw));
        upstream = dx;
    }

    for (depth, block) in cache.blocks.iter().enumerate().rev() {
        let slot = &block.slot;
        let (dw2, db2, mut dh) = linear_backward(&block.hidden, &upstream, rows, params, &slot.fc2, true);
        grads.push((slot.fc2.bias, db2));
        grads.push((slot.fc2.weight, dw2));
        for ((g, &pre), &h) in dh.iter_mut().zip(&block.pre_activation).zip(&block.hidden) {
            *g *= slot.activation.derivative(pre, h);
        }
        let dz1 = match (&slot.bn, &block.bn) {
            (Some(bn), Some(bc)) => {
                let width = slot.fc1.fan_out;
                let scale = &params.tensor(bn.scale).data;
                let mut dscale = vec![0.0; width];
                let mut dshift = vec![0.0; width];
                let mut dnorm = vec![0.0; rows * width];
                for r in 0..rows {
                    for j in 0..width {
                        let i = r * width + j;
                        dscale[j] += dh[i] * bc.normalized[i];
                        dshift[j] += dh[i];
                        dnorm[i] = dh[i] * scale[j] as f64;
                    }
                }
                let dz = match cache.mode {
                    Mode::Train => {
                        let mut sum = vec![0.0; width];
                        let mut dot = vec![0.0; width];
                        for r in 0..rows {
                            for j in 0..width {
                                let i = r * width + j;
                                sum[j] += dnorm[i];
                                dot[j] += dnorm[i] * bc.normalized[i];
                            }
                        }
                        let n = rows as f64;
                        let mut dz = vec![0.0; rows * width];
                        for r in 0..rows {
                            for j in 0..width {
                                let i = r * width + j;
                                dz[i] = bc.inv_std[j] / n * (n * dnorm[i] - sum[j] - bc.normalized[i] * dot[j]);
                            }
                        }
                        bn_stats.push((bn.running_mean, bn.running_var, bc.batch_mean.clone(), bc.batch_var.clone()));
                        dz
                    }
                    Mode::Eval => dnorm
                        .iter()
                        .enumerate()
                        .map(|(i, &g)| g * bc.inv_std[i % width])
                        .collect(),
                };
                grads.push((bn.shift, dshift));
                grads.push((bn.scale, dscale));
                dz
            }
            _ => dh,
        };
        let (dw1, db1, mut dx) = linear_backward(&block.input, &dz1, rows, params, &slot.fc1, has_lower(depth));
        grads.push((slot.fc1.bias, db1));
        grads.push((slot.fc1.weight, dw1));
        if slot.residual && has_lower(depth) {
            dx.iter_mut().zip(&upstream).for_each(|(d, &u)| *d += u);
        }
        upstream = dx;
    }

    if let (Some(stem), Some(pre)) = (&layout.stem, &cache.stem_pre) {
        for (g, &p) in upstream.iter_mut().zip(pre) {
            *g *= Activation::Relu.derivative(p, 0.0);
        }
        let (dw, db, _) = linear_backward(&cache.input, &upstream, rows, params, stem, false);
        grads.push((stem.bias, db));
        grads.push((stem.weight, dw));
    }

    debug_assert!(grads.iter().all(|(i, _)| params.tensor(*i).kind.trainable()));
    grads.sort_by_key(|(i, _)| *i);
    Ok(PathGrad { loss, grads, bn_stats })
}

/// Classification accuracy of `arch` on `batch` in eval mode, evaluated in
/// chunks of `chunk` rows.
pub fn accuracy(params: &ParamSet, arch: &Architecture, batch: &Batch, chunk: usize) -> Result<f64> {
    if batch.rows() == 0 {
        return Err(Error::InvalidArgument("accuracy of an empty batch".into()));
    }
    let mut correct = 0usize;
    let chunk = chunk.max(1);
    for start in (0..batch.rows()).step_by(chunk) {
        let part = batch.slice(start..(start + chunk).min(batch.rows()));
        let cache = forward(params, arch, &part, Mode::Eval)?;
        correct += cache
            .predictions()
            .iter()
            .zip(&part.labels)
            .filter(|(p, &y)| **p == y as usize)
            .count();
    }
    Ok(correct as f64 / batch.rows() as f64)
}

