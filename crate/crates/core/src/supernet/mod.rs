//! The weight-sharing supernet and its training regimes.
//!
//! A strictly fair step draws `m` paths that together activate every choice
//! block exactly once, back-propagates each of them on the same mini-batch
//! against the pre-step parameters, and applies one update with the averaged
//! gradients. Path gradients may be computed in parallel; they are merged in
//! lexicographic order of the paths, so the result does not depend on how
//! the `m` models are ordered or scheduled.

mod config;
mod standalone;

pub use config::{TrainConfig, TrainMode};
pub use standalone::{train_standalone, StandaloneResult};

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::checkpoint::{self, CheckpointManifest, CheckpointMeta};
use crate::engine::data::{Dataset, Split};
use crate::engine::{
    accuracy, backward, cosine_lr, forward, Batch, GradBuffer, InitScheme, Mode, ParamSet, PathGrad, SgdMomentum,
    BN_MOMENTUM,
};
use crate::error::{Error, Result};
use crate::fairness::{sample_krepeat, sample_strict_step, FairnessCounters, StepSample};
use crate::rng::{stream, stream_rng, Rng};
use crate::search_space::{Architecture, SearchSpace};

/// Rows evaluated per forward pass during accuracy measurement.
pub const EVAL_CHUNK: usize = 512;

#[derive(Clone, Debug)]
pub struct Supernet {
    space: SearchSpace,
    params: ParamSet,
    optimizer: SgdMomentum,
    counters: FairnessCounters,
    step: u64,
    seed: u64,
}

/// What one training step did.
#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    /// Mean loss over the step's back-propagations.
    pub loss: f64,
    pub bps: usize,
    pub updates: usize,
    /// Choice blocks executed by each forward pass.
    pub path_lengths: Vec<usize>,
}

/// Forward in train mode and backward through one path.
pub(crate) fn path_gradient(params: &ParamSet, arch: &Architecture, batch: &Batch) -> Result<(PathGrad, usize)> {
    let cache = forward(params, arch, batch, Mode::Train)?;
    let grad = backward(&cache, &batch.labels)?;
    if !grad.all_finite() {
        return Err(Error::Diverged(format!("non-finite loss or gradient on path {arch}")));
    }
    Ok((grad, cache.path_length()))
}

fn apply_bn_stats(params: &mut ParamSet, grad: &PathGrad) {
    for (mean_idx, var_idx, mean, var) in &grad.bn_stats {
        for (running, &batch) in params.tensor_mut(*mean_idx).data.iter_mut().zip(mean) {
            *running = ((1.0 - BN_MOMENTUM) * *running as f64 + BN_MOMENTUM * batch) as f32;
        }
        for (running, &batch) in params.tensor_mut(*var_idx).data.iter_mut().zip(var) {
            *running = ((1.0 - BN_MOMENTUM) * *running as f64 + BN_MOMENTUM * batch) as f32;
        }
    }
}

/// One back-propagation through `arch` followed by an immediate update.
pub(crate) fn single_path_update(
    params: &mut ParamSet,
    optimizer: &mut SgdMomentum,
    arch: &Architecture,
    batch: &Batch,
    lr: f64,
) -> Result<(f64, usize)> {
    let (grad, len) = path_gradient(params, arch, batch)?;
    let mut buffer = GradBuffer::zeros_like(params);
    buffer.accumulate(&grad);
    optimizer.step(params, &buffer, lr)?;
    apply_bn_stats(params, &grad);
    Ok((grad.loss, len))
}

impl Supernet {
    pub fn new(space: SearchSpace, seed: u64, momentum: f64, weight_decay: f64, scheme: InitScheme) -> Self {
        let params = ParamSet::init_supernet(&space, seed, scheme);
        Supernet {
            optimizer: SgdMomentum::new(&params, momentum, weight_decay),
            counters: FairnessCounters::for_space(&space),
            space,
            params,
            step: 0,
            seed,
        }
    }

    /// A fresh supernet initialized from `config.seed`.
    pub fn for_config(space: SearchSpace, config: &TrainConfig) -> Self {
        Self::new(space, config.seed, config.momentum, config.weight_decay, InitScheme::Independent)
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn counters(&self) -> &FairnessCounters {
        &self.counters
    }

    /// Number of parameter updates applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Runs the `m` models of `sample` on `batch`, accumulates their
    /// gradients in canonical path order, divides by `m`, and applies one
    /// update.
    pub fn train_step_with_sample(&mut self, sample: &StepSample, batch: &Batch, lr: f64) -> Result<StepStats> {
        if !sample.covers_every_choice(&self.space) {
            return Err(Error::InvalidArgument(
                "step sample does not cover every choice exactly once".into(),
            ));
        }
        let params = &self.params;
        let mut results: Vec<(Architecture, PathGrad, usize)> = sample
            .models
            .par_iter()
            .map(|arch| path_gradient(params, arch, batch).map(|(g, len)| (arch.clone(), g, len)))
            .collect::<Result<_>>()?;
        results.sort_by(|a, b| a.0.cmp(&b.0));

        let mut buffer = GradBuffer::zeros_like(&self.params);
        for (_, grad, _) in &results {
            buffer.accumulate(grad);
        }
        buffer.scale(1.0 / results.len() as f64);
        self.optimizer.step(&mut self.params, &buffer, lr)?;
        for (arch, grad, _) in &results {
            apply_bn_stats(&mut self.params, grad);
            self.counters.record(arch);
        }
        self.step += 1;
        Ok(StepStats {
            loss: results.iter().map(|r| r.1.loss).sum::<f64>() / results.len() as f64,
            bps: results.len(),
            updates: 1,
            path_lengths: results.iter().map(|r| r.2).collect(),
        })
    }

    /// One strictly fair step with a freshly drawn [`StepSample`].
    pub fn train_step_strict(&mut self, batch: &Batch, rng: &mut Rng, lr: f64) -> Result<StepStats> {
        let sample = sample_strict_step(&self.space, rng);
        self.train_step_with_sample(&sample, batch, lr)
    }

    /// One back-propagation through `arch` and an immediate update.
    pub fn train_single_path(&mut self, arch: &Architecture, batch: &Batch, lr: f64) -> Result<StepStats> {
        self.space.check_arch(arch)?;
        let (loss, len) = single_path_update(&mut self.params, &mut self.optimizer, arch, batch, lr)?;
        self.counters.record(arch);
        self.step += 1;
        Ok(StepStats {
            loss,
            bps: 1,
            updates: 1,
            path_lengths: vec![len],
        })
    }

    /// Accuracy of the path `arch` with inherited weights. Batch-norm uses
    /// running statistics; nothing is mutated.
    pub fn evaluate_submodel(&self, arch: &Architecture, data: &Batch) -> Result<f64> {
        self.space.check_arch(arch)?;
        accuracy(&self.params, arch, data, EVAL_CHUNK)
    }

    /// Replaces the running statistics of the batch-norm layers on `arch`
    /// with the average of the per-batch statistics over `calib`.
    pub fn recalibrate_batchnorm(&mut self, arch: &Architecture, calib: &[Batch]) -> Result<()> {
        recalibrate_batchnorm(&mut self.params, &self.space, arch, calib)
    }

    pub fn save(&self, base: &Path) -> Result<()> {
        checkpoint::save(
            base,
            &self.params,
            &CheckpointMeta {
                space: &self.space,
                seed: self.seed,
                step: self.step,
                path: None,
                counters: Some(&self.counters),
            },
        )
    }

    /// Rebuilds a supernet from a checkpoint. Optimizer velocity is not
    /// stored and restarts from zero.
    pub fn from_checkpoint(manifest: &CheckpointManifest, space: SearchSpace, params: ParamSet) -> Result<Self> {
        if manifest.path.is_some() {
            return Err(Error::Checkpoint("checkpoint holds a single path, not a supernet".into()));
        }
        let counters = manifest
            .counters
            .clone()
            .unwrap_or_else(|| FairnessCounters::for_space(&space));
        Ok(Supernet {
            optimizer: SgdMomentum::new(&params, 0.9, 4e-5),
            counters,
            space,
            params,
            step: manifest.step,
            seed: manifest.seed,
        })
    }

    pub fn load(base: &Path) -> Result<Self> {
        let (manifest, space, params) = checkpoint::load(base)?;
        Self::from_checkpoint(&manifest, space, params)
    }
}

pub(crate) fn recalibrate_batchnorm(
    params: &mut ParamSet,
    space: &SearchSpace,
    arch: &Architecture,
    calib: &[Batch],
) -> Result<()> {
    space.check_arch(arch)?;
    if calib.is_empty() || calib.iter().all(|b| b.rows() == 0) {
        return Err(Error::InvalidArgument("empty calibration set".into()));
    }
    let mut sums: Vec<(usize, usize, Vec<f64>, Vec<f64>)> = Vec::new();
    let mut batches = 0usize;
    for batch in calib.iter().filter(|b| b.rows() > 0) {
        let cache = forward(params, arch, batch, Mode::Train)?;
        let grad = backward(&cache, &batch.labels)?;
        for (i, (mean_idx, var_idx, mean, var)) in grad.bn_stats.into_iter().enumerate() {
            match sums.get_mut(i) {
                Some(acc) => {
                    acc.2.iter_mut().zip(&mean).for_each(|(a, b)| *a += b);
                    acc.3.iter_mut().zip(&var).for_each(|(a, b)| *a += b);
                }
                None => sums.push((mean_idx, var_idx, mean, var)),
            }
        }
        batches += 1;
    }
    for (mean_idx, var_idx, mean, var) in sums {
        for (dst, s) in params.tensor_mut(mean_idx).data.iter_mut().zip(mean) {
            *dst = (s / batches as f64) as f32;
        }
        for (dst, s) in params.tensor_mut(var_idx).data.iter_mut().zip(var) {
            *dst = (s / batches as f64) as f32;
        }
    }
    Ok(())
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    /// Largest across-choice variance of the update counters over layers.
    pub counter_variance: f64,
}

/// Trains a supernet on the training split of `data` under `config.mode`.
///
/// Every mode sees the same mini-batches for the same number of epochs.
/// `on_step` runs after every parameter update.
pub fn train_supernet_with(
    space: SearchSpace,
    data: &Dataset,
    config: &TrainConfig,
    mut on_step: impl FnMut(&Supernet, &StepStats),
) -> Result<(Supernet, Vec<EpochLog>)> {
    config.validate()?;
    if data.split(Split::Train).is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    let mut net = Supernet::for_config(space, config);
    let mut shuffle = stream_rng(config.seed, &[stream::SHUFFLE]);
    let mut sampling = stream_rng(config.seed, &[stream::SAMPLING]);
    let batches_per_epoch = data.split(Split::Train).len().div_ceil(config.batch_size) as u64;
    let total_steps = config.epochs as u64 * batches_per_epoch * config.mode.updates_per_batch();
    let space = net.space.clone();
    let mut krepeat = match config.mode {
        TrainMode::EfKRepeat { k } => Some(sample_krepeat(&space, stream_rng(config.seed, &[stream::SAMPLING]), k)?),
        _ => None,
    };

    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (mut loss_sum, mut bps) = (0.0, 0usize);
        let mut lr = config.lr0;
        for batch in data.epoch_batches(config.batch_size, &mut shuffle) {
            let stats = match config.mode {
                TrainMode::StrictFair => {
                    lr = cosine_lr(net.step, total_steps, config.lr0)?;
                    let s = net.train_step_strict(&batch, &mut sampling, lr)?;
                    on_step(&net, &s);
                    s
                }
                TrainMode::EfUniform | TrainMode::Spos => {
                    lr = cosine_lr(net.step, total_steps, config.lr0)?;
                    let arch = crate::fairness::sample_uniform(&space, &mut sampling);
                    let s = net.train_single_path(&arch, &batch, lr)?;
                    on_step(&net, &s);
                    s
                }
                TrainMode::EfKRepeat { k } => {
                    let schedule = krepeat.as_mut().expect("k-repeat schedule");
                    let mut total = StepStats {
                        loss: 0.0,
                        bps: 0,
                        updates: 0,
                        path_lengths: Vec::with_capacity(k),
                    };
                    for arch in schedule.take(k) {
                        lr = cosine_lr(net.step, total_steps, config.lr0)?;
                        let s = net.train_single_path(&arch, &batch, lr)?;
                        on_step(&net, &s);
                        total.loss += s.loss;
                        total.bps += 1;
                        total.updates += 1;
                        total.path_lengths.extend(s.path_lengths);
                    }
                    total.loss /= k as f64;
                    total
                }
            };
            loss_sum += stats.loss * stats.bps as f64;
            bps += stats.bps;
        }
        log.push(EpochLog {
            epoch: epoch + 1,
            step: net.step,
            lr,
            train_loss: loss_sum / bps.max(1) as f64,
            counter_variance: net.counters.report().max_variance(),
        });
    }
    Ok((net, log))
}

/// [`train_supernet_with`] without a step callback.
pub fn train_supernet(space: SearchSpace, data: &Dataset, config: &TrainConfig) -> Result<(Supernet, Vec<EpochLog>)> {
    train_supernet_with(space, data, config, |_, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::data::SplitFractions;
    use crate::rng::seeded;
    use crate::search_space::{Activation, Multiplier};

    fn space(bn: bool) -> SearchSpace {
        let r = |v| Multiplier::integer(v).unwrap();
        SearchSpace::uniform(
            2,
            3,
            vec![6, 6, 6],
            &[
                (r(1), Activation::Relu, bn),
                (r(2), Activation::Tanh, bn),
                (r(1), Activation::Identity, false),
            ],
        )
        .unwrap()
    }

    fn data() -> Dataset {
        Dataset::blobs(240, 2, 3, 3.0, 0.5, 1)
            .unwrap()
            .with_splits(SplitFractions::default(), 1)
            .unwrap()
    }

    fn config(mode: TrainMode) -> TrainConfig {
        TrainConfig {
            mode,
            epochs: 3,
            batch_size: 32,
            lr0: 0.05,
            seed: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn strict_step_counts_and_single_update() {
        let d = data();
        let mut net = Supernet::for_config(space(false), &config(TrainMode::StrictFair));
        let batch = d.batch(&d.split(Split::Train)[..32]);
        let stats = net.train_step_strict(&batch, &mut seeded(0), 0.05).unwrap();
        assert_eq!(stats.bps, 3);
        assert_eq!(stats.updates, 1);
        assert_eq!(net.step(), 1);
        assert!(net.counters().counts().iter().flatten().all(|&c| c == 1));
        assert_eq!(net.counters().report().max_variance(), 0.0);
    }

    #[test]
    fn rejects_non_covering_sample() {
        let d = data();
        let mut net = Supernet::for_config(space(false), &config(TrainMode::StrictFair));
        let batch = d.batch(&d.split(Split::Train)[..8]);
        let bad = StepSample {
            models: vec![Architecture::zeros(2); 3],
        };
        assert!(net.train_step_with_sample(&bad, &batch, 0.1).is_err());
        assert_eq!(net.step(), 0);
    }

    #[test]
    fn krepeat_counter_runs() {
        let d = data();
        let mut history = Vec::new();
        train_supernet_with(space(false), &d, &config(TrainMode::EfKRepeat { k: 6 }), |net, _| {
            history.push(net.counters().clone());
        })
        .unwrap();
        // Within each run of 6 updates the same choice is incremented per layer.
        for run in history.chunks(6) {
            let changed = |a: &FairnessCounters, b: &FairnessCounters| -> Vec<(usize, usize)> {
                let mut v = Vec::new();
                for (l, (ra, rb)) in a.counts().iter().zip(b.counts()).enumerate() {
                    for (j, (x, y)) in ra.iter().zip(rb).enumerate() {
                        if x != y {
                            v.push((l, j));
                        }
                    }
                }
                v
            };
            let first = changed(&run[0], &run[1]);
            for w in run.windows(2) {
                assert_eq!(changed(&w[0], &w[1]), first);
            }
        }
    }

    #[test]
    fn evaluation_is_pure_and_repeatable() {
        let d = data();
        let (net, _) = train_supernet(space(true), &d, &config(TrainMode::StrictFair)).unwrap();
        let before = net.params().clone();
        let val = d.split_batch(Split::Val);
        let arch: Architecture = "1,0".parse().unwrap();
        let a = net.evaluate_submodel(&arch, &val).unwrap();
        let b = net.evaluate_submodel(&arch, &val).unwrap();
        assert_eq!(a, b);
        assert_eq!(net.params(), &before);
        assert!(net.evaluate_submodel(&"3,0".parse().unwrap(), &val).is_err());
    }

    #[test]
    fn strict_training_log_has_zero_variance() {
        let (net, log) = train_supernet(space(false), &data(), &config(TrainMode::StrictFair)).unwrap();
        assert_eq!(log.len(), 3);
        assert!(log.iter().all(|e| e.counter_variance == 0.0));
        assert!(net.counters().all_equal());
        assert_eq!(net.counters().total_bp(), net.step() * 3);
    }

    #[test]
    fn single_calibration_batch_sets_running_stats() {
        let d = data();
        let (mut net, _) = train_supernet(space(true), &d, &config(TrainMode::Spos)).unwrap();
        let arch: Architecture = "0,1".parse().unwrap();
        let batch = d.batch(&d.split(Split::Val)[..20]);
        net.recalibrate_batchnorm(&arch, std::slice::from_ref(&batch)).unwrap();

        let cache = forward(net.params(), &arch, &batch, Mode::Train).unwrap();
        let stats = backward(&cache, &batch.labels).unwrap().bn_stats;
        assert_eq!(stats.len(), 2);
        for (mean_idx, var_idx, mean, var) in stats {
            for (a, b) in net.params().tensor(mean_idx).data.iter().zip(&mean) {
                assert_eq!(*a, *b as f32);
            }
            for (a, b) in net.params().tensor(var_idx).data.iter().zip(&var) {
                assert_eq!(*a, *b as f32);
            }
        }
        let once = net.params().clone();
        net.recalibrate_batchnorm(&arch, std::slice::from_ref(&batch)).unwrap();
        assert_eq!(net.params(), &once);
        assert!(net.recalibrate_batchnorm(&arch, &[]).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (net, _) = train_supernet(space(true), &data(), &config(TrainMode::StrictFair)).unwrap();
        net.save(&dir.path().join("sn")).unwrap();
        let back = Supernet::load(&dir.path().join("sn")).unwrap();
        assert_eq!(back.params(), net.params());
        assert_eq!(back.counters(), net.counters());
        assert_eq!(back.step(), net.step());
    }
}
