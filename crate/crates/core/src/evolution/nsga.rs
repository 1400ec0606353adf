use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search_space::Architecture;

/// A point in objective space where every coordinate is a cost: lower is
/// better.
pub trait Fitness {
    fn num_objectives(&self) -> usize;
    fn cost(&self, k: usize) -> f64;
}

impl Fitness for [f64] {
    fn num_objectives(&self) -> usize {
        self.len()
    }

    fn cost(&self, k: usize) -> f64 {
        self[k]
    }
}

impl Fitness for Vec<f64> {
    fn num_objectives(&self) -> usize {
        self.len()
    }

    fn cost(&self, k: usize) -> f64 {
        self[k]
    }
}

impl<const N: usize> Fitness for [f64; N] {
    fn num_objectives(&self) -> usize {
        N
    }

    fn cost(&self, k: usize) -> f64 {
        self[k]
    }
}

/// Search objectives: accuracy is maximized, both costs minimized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objectives {
    pub accuracy: f64,
    pub mult_adds: u64,
    pub params: u64,
}

impl Fitness for Objectives {
    fn num_objectives(&self) -> usize {
        3
    }

    fn cost(&self, k: usize) -> f64 {
        match k {
            0 => -self.accuracy,
            1 => self.mult_adds as f64,
            2 => self.params as f64,
            _ => panic!("objective index {k} out of range"),
        }
    }
}

impl<T: Fitness + ?Sized> Fitness for &T {
    fn num_objectives(&self) -> usize {
        (**self).num_objectives()
    }

    fn cost(&self, k: usize) -> f64 {
        (**self).cost(k)
    }
}

/// `a` is no worse than `b` everywhere and strictly better somewhere.
pub fn dominates<T: Fitness + ?Sized>(a: &T, b: &T) -> bool {
    let mut strict = false;
    for k in 0..a.num_objectives() {
        let (x, y) = (a.cost(k), b.cost(k));
        if x > y {
            return false;
        }
        strict |= x < y;
    }
    strict
}

/// Partitions `pop` into successive non-dominated fronts of indices.
/// Indices within a front are ascending.
pub fn non_dominated_sort<T: Fitness>(pop: &[T]) -> Vec<Vec<usize>> {
    let n = pop.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut counts = vec![0usize; n];
    for i in 0..n {
        for j in i + 1..n {
            if dominates(&pop[i], &pop[j]) {
                dominated_by[i].push(j);
                counts[j] += 1;
            } else if dominates(&pop[j], &pop[i]) {
                dominated_by[j].push(i);
                counts[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| counts[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominated_by[i] {
                counts[j] -= 1;
                if counts[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(std::mem::replace(&mut current, next));
    }
    fronts
}

/// Crowding distance of each member of `front` (indices into `pop`), in the
/// order of `front`.
pub fn crowding_distance<T: Fitness>(pop: &[T], front: &[usize]) -> Vec<f64> {
    let n = front.len();
    let mut distance = vec![0.0; n];
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let objectives = pop[front[0]].num_objectives();
    let mut order: Vec<usize> = (0..n).collect();
    for k in 0..objectives {
        let value = |i: usize| pop[front[i]].cost(k);
        order.sort_by(|&a, &b| value(a).total_cmp(&value(b)).then(a.cmp(&b)));
        let (lo, hi) = (value(order[0]), value(order[n - 1]));
        distance[order[0]] = f64::INFINITY;
        distance[order[n - 1]] = f64::INFINITY;
        let range = hi - lo;
        if range <= 0.0 {
            continue;
        }
        for w in 1..n - 1 {
            let i = order[w];
            if distance[i].is_finite() {
                distance[i] += (value(order[w + 1]) - value(order[w - 1])) / range;
            }
        }
    }
    distance
}

/// A ranked member of the population.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub arch: Architecture,
    pub obj: Objectives,
    /// Front number, starting at 1. Zero until [`assign_rank_and_crowding`].
    pub rank: usize,
    pub crowding: f64,
}

impl Individual {
    pub fn new(arch: Architecture, obj: Objectives) -> Self {
        Individual {
            arch,
            obj,
            rank: 0,
            crowding: 0.0,
        }
    }
}

/// Sorts `pop` into fronts and fills in `rank` and `crowding`. Returns the
/// fronts as index lists.
pub fn assign_rank_and_crowding(pop: &mut [Individual]) -> Vec<Vec<usize>> {
    let objs: Vec<Objectives> = pop.iter().map(|i| i.obj).collect();
    let fronts = non_dominated_sort(&objs);
    for (r, front) in fronts.iter().enumerate() {
        let crowd = crowding_distance(&objs, front);
        for (&i, c) in front.iter().zip(crowd) {
            pop[i].rank = r + 1;
            pop[i].crowding = c;
        }
    }
    fronts
}

/// NSGA-II ordering: lower rank first, then larger crowding distance.
pub fn crowded_cmp(a: &Individual, b: &Individual) -> Ordering {
    a.rank
        .cmp(&b.rank)
        .then_with(|| b.crowding.total_cmp(&a.crowding))
}

/// Binary tournament: lower rank wins, then larger crowding, then a coin.
pub fn tournament_select<'a, R: Rng + ?Sized>(pop: &'a [Individual], rng: &mut R) -> Result<&'a Individual> {
    if pop.is_empty() {
        return Err(Error::InvalidArgument("tournament over an empty population".into()));
    }
    let a = &pop[rng.random_range(0..pop.len())];
    let b = &pop[rng.random_range(0..pop.len())];
    Ok(match crowded_cmp(a, b) {
        Ordering::Less => a,
        Ordering::Greater => b,
        Ordering::Equal => {
            if rng.random_bool(0.5) {
                a
            } else {
                b
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn obj(accuracy: f64, mult_adds: u64, params: u64) -> Objectives {
        Objectives {
            accuracy,
            mult_adds,
            params,
        }
    }

    #[test]
    fn dominance_examples() {
        assert!(dominates(&obj(0.8, 100, 10), &obj(0.7, 200, 20)));
        assert!(!dominates(&obj(0.8, 100, 10), &obj(0.8, 100, 10)));
        let (a, b) = (obj(0.8, 300, 10), obj(0.7, 200, 20));
        assert!(!dominates(&a, &b) && !dominates(&b, &a));
    }

    #[test]
    fn square_fronts() {
        let pts = [[1.0, 1.0], [1.0, 2.0], [2.0, 1.0], [2.0, 2.0]];
        assert_eq!(non_dominated_sort(&pts), vec![vec![0], vec![1, 2], vec![3]]);
    }

    #[test]
    fn identical_population_is_one_front() {
        let pts = vec![[0.5, 3.0]; 6];
        assert_eq!(non_dominated_sort(&pts), vec![(0..6).collect::<Vec<_>>()]);
    }

    #[test]
    fn crowding_examples() {
        let pts = [[0.0], [5.0], [10.0]];
        assert_eq!(crowding_distance(&pts, &[0, 1, 2]), vec![f64::INFINITY, 1.0, f64::INFINITY]);
        assert!(crowding_distance(&pts, &[0, 2]).iter().all(|d| d.is_infinite()));

        // Two objectives: interior point (2,2) between (1,3) and (3,1).
        let pts = [[1.0, 3.0], [2.0, 2.0], [3.0, 1.0], [1.5, 2.5]];
        let d = crowding_distance(&pts, &[0, 1, 2, 3]);
        assert!(d[0].is_infinite() && d[2].is_infinite());
        assert!((d[1] - (1.5 / 2.0 + 1.5 / 2.0)).abs() < 1e-12);
        assert!((d[3] - (1.0 / 2.0 + 1.0 / 2.0)).abs() < 1e-12);

        // Interior duplicates get nothing from the tied objective.
        let pts = [[0.0], [4.0], [4.0], [8.0]];
        let d = crowding_distance(&pts, &[0, 1, 2, 3]);
        assert_eq!(&d[1..3], &[0.5, 0.5]);
        let pts = [[0.0], [4.0], [4.0], [4.0], [8.0]];
        let d = crowding_distance(&pts, &[0, 1, 2, 3, 4]);
        assert_eq!(d[2], 0.0);
    }

    #[test]
    fn zero_range_objective_contributes_nothing() {
        let pts = [[1.0, 7.0], [2.0, 7.0], [3.0, 7.0], [4.0, 7.0]];
        let d = crowding_distance(&pts, &[0, 1, 2, 3]);
        assert!((d[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    fn ind(rank: usize, crowding: f64) -> Individual {
        Individual {
            arch: Architecture::zeros(1),
            obj: obj(0.0, 0, 0),
            rank,
            crowding,
        }
    }

    #[test]
    fn tournament_prefers_rank_then_crowding() {
        let mut rng = seeded(1);
        assert_eq!(crowded_cmp(&ind(1, 0.0), &ind(2, 9.0)), Ordering::Less);
        assert_eq!(crowded_cmp(&ind(1, f64::INFINITY), &ind(1, 0.5)), Ordering::Less);
        assert!(tournament_select(&[], &mut rng).is_err());
    }

    #[test]
    fn tournament_frequencies_follow_rank() {
        let pop: Vec<Individual> = (0..30).map(|i| ind(1 + i % 3, 1.0)).collect();
        let mut rng = seeded(7);
        let mut wins = [0usize; 3];
        for _ in 0..6000 {
            wins[tournament_select(&pop, &mut rng).unwrap().rank - 1] += 1;
        }
        assert!(wins[0] > wins[1] && wins[1] > wins[2], "{wins:?}");
    }
}
