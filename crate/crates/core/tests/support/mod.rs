//! Backprop against central finite differences of an independent forward
//! pass written directly over named tensors.

use std::collections::BTreeMap;

use rand::Rng;
use strictfair::engine::{backward, forward, Batch, InitScheme, Mode, ParamSet};
use strictfair::rng::seeded;
use strictfair::search_space::{Activation, Architecture, SearchSpace};

type Weights = BTreeMap<String, Vec<f64>>;

pub struct Oracle<'a> {
    pub space: &'a SearchSpace,
    pub arch: &'a Architecture,
    pub x: Vec<f64>,
    pub y: Vec<usize>,
}

fn dense(w: &Weights, name: &str, x: &[f64], rows: usize, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let (wt, b) = (&w[&format!("{name}.weight")], &w[&format!("{name}.bias")]);
    let mut out = Vec::with_capacity(rows * fan_out);
    for r in 0..rows {
        for o in 0..fan_out {
            let mut s = b[o];
            for i in 0..fan_in {
                s += wt[o * fan_in + i] * x[r * fan_in + i];
            }
            out.push(s);
        }
    }
    out
}

fn act(a: Activation, v: f64) -> f64 {
    match a {
        Activation::Relu => v.max(0.0),
        Activation::Tanh => v.tanh(),
        Activation::Identity => v,
    }
}

impl Oracle<'_> {
    /// Mean cross-entropy plus every pre-activation that feeds a ReLU.
    pub fn loss(&self, w: &Weights) -> (f64, Vec<f64>) {
        let rows = self.y.len();
        let mut kinks = Vec::new();
        let mut h = self.x.clone();
        if let Some((i, o)) = self.space.stem_shape() {
            let pre = dense(w, "stem", &h, rows, i, o);
            kinks.extend(&pre);
            h = pre.into_iter().map(|v| v.max(0.0)).collect();
        }
        for (l, c) in self.arch.iter().enumerate() {
            let s = self.space.block_shape(l, c);
            let p = format!("layer{l}.choice{c}");
            let mut z = dense(w, &format!("{p}.fc1"), &h, rows, s.d_in, s.hidden);
            if s.batchnorm {
                let (g, b) = (&w[&format!("{p}.bn.scale")], &w[&format!("{p}.bn.shift")]);
                for j in 0..s.hidden {
                    let col: Vec<f64> = (0..rows).map(|r| z[r * s.hidden + j]).collect();
                    let mean = col.iter().sum::<f64>() / rows as f64;
                    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / rows as f64;
                    for r in 0..rows {
                        z[r * s.hidden + j] = g[j] * (col[r] - mean) / (var + 1e-5).sqrt() + b[j];
                    }
                }
            }
            if s.activation == Activation::Relu {
                kinks.extend(&z);
            }
            let a: Vec<f64> = z.iter().map(|&v| act(s.activation, v)).collect();
            let out = dense(w, &format!("{p}.fc2"), &a, rows, s.hidden, s.d_out);
            h = if s.residual {
                out.iter().zip(&h).map(|(o, x)| o + x).collect()
            } else {
                out
            };
        }
        let classes = self.space.num_classes();
        if let Some((i, o)) = self.space.head_shape() {
            h = dense(w, "head", &h, rows, i, o);
        }
        let mut loss = 0.0;
        for r in 0..rows {
            let row = &h[r * classes..(r + 1) * classes];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[self.y[r]];
        }
        (loss / rows as f64, kinks)
    }
}

/// Compares backprop with central differences of step `eps` on every
/// trainable tensor of the path, skipping components whose perturbations
/// move a ReLU input across zero. Returns the number of components compared.
pub fn check_gradients(space: &SearchSpace, arch: &Architecture, seed: u64, eps: f64) -> usize {
    let params = ParamSet::init_supernet(space, seed, InitScheme::Independent);
    let mut rng = seeded(seed ^ 0xabc);
    let rows = 7;
    let dim = space.input_dim();
    let features: Vec<f32> = (0..rows * dim).map(|_| rng.random_range(-1.5f32..1.5)).collect();
    let labels: Vec<u32> = (0..rows).map(|_| rng.random_range(0..space.num_classes() as u32)).collect();
    let batch = Batch::new(features.clone(), labels.clone(), dim).unwrap();

    let cache = forward(&params, arch, &batch, Mode::Train).unwrap();
    let grad = backward(&cache, &labels).unwrap();

    let weights: Weights = params
        .tensors()
        .iter()
        .map(|t| (t.name.clone(), t.data.iter().map(|&v| v as f64).collect()))
        .collect();
    let oracle = Oracle {
        space,
        arch,
        x: features.iter().map(|&v| v as f64).collect(),
        y: labels.iter().map(|&v| v as usize).collect(),
    };
    let (base_loss, base_kinks) = oracle.loss(&weights);
    assert!((base_loss - grad.loss).abs() < 1e-9, "loss {base_loss} vs {}", grad.loss);

    let path = params.path_tensors(arch).unwrap();
    let mut checked = 0;
    for &index in &path {
        let tensor = params.tensor(index);
        if !tensor.kind.trainable() {
            assert!(grad.grad(index).is_none());
            continue;
        }
        let analytic = grad.grad(index).unwrap_or_else(|| panic!("missing gradient for {}", tensor.name));
        for k in 0..tensor.data.len() {
            let shifted = |h: f64| {
                let mut w = weights.clone();
                w.get_mut(&tensor.name).unwrap()[k] += h;
                oracle.loss(&w)
            };
            let probes = [shifted(-2.0 * eps), shifted(-eps), shifted(eps), shifted(2.0 * eps)];
            let crosses = probes.iter().any(|(_, kinks)| {
                base_kinks.iter().zip(kinks).any(|(&b, &p)| (b > 0.0) != (p > 0.0))
            });
            if crosses {
                continue;
            }
            // Fourth-order central difference.
            let [m2, m1, p1, p2] = probes.map(|(loss, _)| loss);
            let numeric = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * eps);
            let a = analytic[k];
            assert!(
                (a - numeric).abs() <= 1e-6 + 1e-3 * numeric.abs().max(a.abs()),
                "{}[{k}]: analytic {a} numeric {numeric}",
                tensor.name
            );
            checked += 1;
        }
    }

    // No gradient reaches tensors off the path.
    for (index, _) in &grad.grads {
        assert!(path.contains(index));
    }
    checked
}
