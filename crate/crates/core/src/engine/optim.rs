use crate::error::{Error, Result};

use super::params::{GradBuffer, ParamSet};

/// SGD with momentum and L2 weight decay:
///
/// ```text
/// v <- momentum * v + grad + weight_decay * param
/// param <- param - lr * v
/// ```
///
/// Only tensors touched by the gradient buffer are updated, so blocks off
/// the trained path keep both their values and their velocity.
#[derive(Clone, Debug)]
pub struct SgdMomentum {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Option<Vec<f64>>>,
}

impl SgdMomentum {
    pub fn new(params: &ParamSet, momentum: f64, weight_decay: f64) -> Self {
        SgdMomentum {
            momentum,
            weight_decay,
            velocity: vec![None; params.len()],
        }
    }

    /// Applies one update. A non-finite gradient aborts before any parameter
    /// changes.
    pub fn step(&mut self, params: &mut ParamSet, grads: &GradBuffer, lr: f64) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::Diverged("non-finite gradient".into()));
        }
        for (index, grad) in grads.iter_touched() {
            let tensor = params.tensor_mut(index);
            if !tensor.kind.trainable() {
                continue;
            }
            let v = self.velocity[index].get_or_insert_with(|| vec![0.0; grad.len()]);
            for ((p, vi), &g) in tensor.data.iter_mut().zip(v.iter_mut()).zip(grad) {
                *vi = self.momentum * *vi + g + self.weight_decay * *p as f64;
                *p = (*p as f64 - lr * *vi) as f32;
            }
        }
        Ok(())
    }
}

/// Cosine decay from `lr0` at step 0 to zero at `total_steps`.
pub fn cosine_lr(step: u64, total_steps: u64, lr0: f64) -> Result<f64> {
    if step > total_steps {
        return Err(Error::InvalidArgument(format!(
            "step {step} is past the schedule end {total_steps}"
        )));
    }
    if total_steps == 0 {
        return Ok(lr0);
    }
    let progress = step as f64 / total_steps as f64;
    Ok(lr0 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{InitScheme, PathGrad};
    use crate::search_space::{Activation, Multiplier, SearchSpace};

    fn params() -> ParamSet {
        let op = (Multiplier::integer(1).unwrap(), Activation::Relu, false);
        let s = SearchSpace::uniform(2, 2, vec![2, 2], &[op, op]).unwrap();
        ParamSet::init_supernet(&s, 0, InitScheme::Independent)
    }

    fn constant_grad(p: &ParamSet, index: usize, value: f64) -> GradBuffer {
        let mut g = GradBuffer::zeros_like(p);
        g.accumulate(&PathGrad {
            loss: 0.0,
            grads: vec![(index, vec![value; p.tensor(index).data.len()])],
            bn_stats: vec![],
        });
        g
    }

    #[test]
    fn plain_sgd() {
        let mut p = params();
        let before = p.tensor(0).data.clone();
        let mut opt = SgdMomentum::new(&p, 0.0, 0.0);
        let g = constant_grad(&p, 0, 0.5);
        opt.step(&mut p, &g, 0.1).unwrap();
        for (a, b) in p.tensor(0).data.iter().zip(&before) {
            assert!((*a as f64 - (*b as f64 - 0.05)).abs() < 1e-6);
        }
    }

    #[test]
    fn momentum_unrolls() {
        // Two steps with constant g: displacement lr * g * (2 + mu).
        let mut p = params();
        let before = p.tensor(0).data.clone();
        let (lr, g, mu) = (0.1, 0.25, 0.9);
        let mut opt = SgdMomentum::new(&p, mu, 0.0);
        let grads = constant_grad(&p, 0, g);
        opt.step(&mut p, &grads, lr).unwrap();
        opt.step(&mut p, &grads, lr).unwrap();
        for (a, b) in p.tensor(0).data.iter().zip(&before) {
            assert!((*b as f64 - *a as f64 - lr * g * (2.0 + mu)).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_grad_no_decay_is_identity() {
        let mut p = params();
        let before = p.clone();
        let mut opt = SgdMomentum::new(&p, 0.9, 0.0);
        let g = constant_grad(&p, 0, 0.0);
        opt.step(&mut p, &g, 0.1).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn untouched_tensors_are_skipped() {
        let mut p = params();
        let before = p.clone();
        let mut opt = SgdMomentum::new(&p, 0.9, 4e-5);
        let g = constant_grad(&p, 0, 1.0);
        opt.step(&mut p, &g, 0.1).unwrap();
        for i in 1..p.len() {
            assert_eq!(p.tensor(i), before.tensor(i));
        }
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut p = params();
        let before = p.clone();
        let mut opt = SgdMomentum::new(&p, 0.9, 0.0);
        let g = constant_grad(&p, 0, f64::NAN);
        assert!(matches!(opt.step(&mut p, &g, 0.1), Err(Error::Diverged(_))));
        assert_eq!(p, before);
    }

    #[test]
    fn cosine_schedule() {
        assert_eq!(cosine_lr(0, 100, 0.045).unwrap(), 0.045);
        assert!(cosine_lr(100, 100, 0.045).unwrap().abs() < 1e-15);
        assert!((cosine_lr(50, 100, 0.045).unwrap() - 0.0225).abs() < 1e-15);
        assert!(cosine_lr(101, 100, 0.045).is_err());
    }
}
