use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search_space::{Architecture, SearchSpace};

/// Draws one path with every layer's choice uniform over `[0, m)`.
pub fn sample_uniform<R: Rng + ?Sized>(space: &SearchSpace, rng: &mut R) -> Architecture {
    let m = space.choices();
    Architecture::new((0..space.num_layers()).map(|_| rng.random_range(0..m)).collect())
}

/// The `m` paths trained together in one strictly fair step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSample {
    pub models: Vec<Architecture>,
}

impl StepSample {
    /// True iff every layer's choices across the models are a permutation of `0..m`.
    pub fn covers_every_choice(&self, space: &SearchSpace) -> bool {
        let m = space.choices();
        if self.models.len() != m || !self.models.iter().all(|a| space.validate(a)) {
            return false;
        }
        (0..space.num_layers()).all(|l| {
            let mut seen = vec![false; m];
            self.models.iter().all(|a| !std::mem::replace(&mut seen[a.choice(l)], true))
        })
    }

    /// Models in canonical (lexicographic) order.
    pub fn sorted(&self) -> Vec<Architecture> {
        let mut v = self.models.clone();
        v.sort();
        v
    }
}

/// Draws an independent uniform permutation of `0..m` for every layer
/// (Fisher-Yates); model `k` takes entry `k` of each layer's permutation.
pub fn sample_strict_step<R: Rng + ?Sized>(space: &SearchSpace, rng: &mut R) -> StepSample {
    let (m, layers) = (space.choices(), space.num_layers());
    let mut columns = vec![vec![0usize; m]; layers];
    for column in &mut columns {
        column.iter_mut().enumerate().for_each(|(i, c)| *c = i);
        column.shuffle(rng);
    }
    let models = (0..m)
        .map(|k| Architecture::new(columns.iter().map(|column| column[k]).collect()))
        .collect();
    StepSample { models }
}

/// An endless schedule yielding each uniformly drawn path `k` times in a row.
pub struct KRepeatSchedule<'a, R: Rng> {
    space: &'a SearchSpace,
    rng: R,
    k: usize,
    current: Option<Architecture>,
    remaining: usize,
}

impl<R: Rng> Iterator for KRepeatSchedule<'_, R> {
    type Item = Architecture;

    fn next(&mut self) -> Option<Architecture> {
        if self.remaining == 0 {
            self.current = Some(sample_uniform(self.space, &mut self.rng));
            self.remaining = self.k;
        }
        self.remaining -= 1;
        self.current.clone()
    }
}

/// Builds a [`KRepeatSchedule`]; `k` must be at least one.
pub fn sample_krepeat<R: Rng>(space: &SearchSpace, rng: R, k: usize) -> Result<KRepeatSchedule<'_, R>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k-repeat schedule needs k >= 1".into()));
    }
    Ok(KRepeatSchedule {
        space,
        rng,
        k,
        current: None,
        remaining: 0,
    })
}
