use serde::{Deserialize, Serialize};

use super::{single_path_update, TrainConfig, EVAL_CHUNK};
use crate::engine::data::{Dataset, Split};
use crate::engine::{accuracy, cosine_lr, ParamSet, SgdMomentum};
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};
use crate::search_space::{Architecture, SearchSpace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandaloneResult {
    pub arch: Architecture,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub final_loss: f64,
    pub steps: u64,
    #[serde(skip)]
    pub params: Option<ParamSet>,
}

/// Trains the single path `arch` from scratch. It starts from the same
/// per-block initialization the supernet would use for `config.seed` and
/// sees the same mini-batch order.
pub fn train_standalone(
    space: &SearchSpace,
    arch: &Architecture,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<StandaloneResult> {
    config.validate()?;
    space.check_arch(arch)?;
    if data.split(Split::Train).is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    let mut params = ParamSet::init_path(space, arch, config.seed)?;
    let mut optimizer = SgdMomentum::new(&params, config.momentum, config.weight_decay);
    let mut shuffle = stream_rng(config.seed, &[stream::SHUFFLE]);
    let total = config.epochs as u64 * data.split(Split::Train).len().div_ceil(config.batch_size) as u64;

    let mut step = 0u64;
    let mut final_loss = f64::NAN;
    for _ in 0..config.epochs {
        let (mut sum, mut n) = (0.0, 0usize);
        for batch in data.epoch_batches(config.batch_size, &mut shuffle) {
            let lr = cosine_lr(step, total, config.lr0)?;
            let (loss, _) = single_path_update(&mut params, &mut optimizer, arch, &batch, lr)?;
            sum += loss;
            n += 1;
            step += 1;
        }
        final_loss = sum / n as f64;
    }
    let val_accuracy = accuracy(&params, arch, &data.split_batch(Split::Val), EVAL_CHUNK)?;
    let test_accuracy = accuracy(&params, arch, &data.split_batch(Split::Test), EVAL_CHUNK)?;
    Ok(StandaloneResult {
        arch: arch.clone(),
        val_accuracy,
        test_accuracy,
        final_loss,
        steps: step,
        params: Some(params),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::data::SplitFractions;
    use crate::search_space::{Activation, Multiplier};

    #[test]
    fn learns_separable_blobs() {
        let r = |v| Multiplier::integer(v).unwrap();
        let space = SearchSpace::uniform(2, 3, vec![8, 8, 8], &[(r(2), Activation::Relu, false), (r(1), Activation::Tanh, false)])
            .unwrap();
        let data = Dataset::blobs(300, 2, 3, 4.0, 0.4, 2)
            .unwrap()
            .with_splits(SplitFractions::default(), 2)
            .unwrap();
        let config = TrainConfig {
            epochs: 20,
            batch_size: 32,
            lr0: 0.02,
            ..TrainConfig::default()
        };
        let arch: Architecture = "0,1".parse().unwrap();
        let a = train_standalone(&space, &arch, &data, &config).unwrap();
        let b = train_standalone(&space, &arch, &data, &config).unwrap();
        assert!(a.test_accuracy > 0.9, "accuracy {} loss {} val {}", a.test_accuracy, a.final_loss, a.val_accuracy);
        assert_eq!(a, b);
        assert_eq!(a.steps, 20 * 6);
    }
}
