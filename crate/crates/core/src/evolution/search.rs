use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::SearchConfig;
use super::mutation::{crossover, mutate_hierarchical, policy_update, MutatorPolicy, RewardHistory};
use super::nsga::{assign_rank_and_crowding, crowded_cmp, non_dominated_sort, tournament_select, Individual, Objectives};
use crate::analysis::evenly_spaced_indices;
use crate::engine::Batch;
use crate::error::{Error, Result};
use crate::fairness::sample_uniform;
use crate::rng::{stream, stream_rng};
use crate::search_space::{Architecture, SearchSpace};
use crate::supernet::Supernet;

/// Scores an architecture on the search objectives.
pub trait Evaluator: Sync {
    fn space(&self) -> &SearchSpace;
    fn evaluate(&self, arch: &Architecture) -> Result<Objectives>;
}

/// Accuracy with inherited supernet weights on a fixed batch, costs from
/// the analytic profile.
pub struct SupernetEvaluator<'a> {
    pub supernet: &'a Supernet,
    pub data: &'a Batch,
}

impl Evaluator for SupernetEvaluator<'_> {
    fn space(&self) -> &SearchSpace {
        self.supernet.space()
    }

    fn evaluate(&self, arch: &Architecture) -> Result<Objectives> {
        let accuracy = self.supernet.evaluate_submodel(arch, self.data)?;
        let profile = self.supernet.space().profile(arch)?;
        Ok(Objectives {
            accuracy,
            mult_adds: profile.mult_adds,
            params: profile.params,
        })
    }
}

/// The first front of the population after one generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationLog {
    pub generation: usize,
    /// Cumulative evaluations so far.
    pub evaluated: usize,
    pub front: Vec<Individual>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    /// The final population, ranked.
    pub population: Vec<Individual>,
    /// Its first front.
    pub front: Vec<Individual>,
    /// Evenly spaced picks from the population by accuracy, ascending.
    pub selected: Vec<Individual>,
    pub generations: Vec<GenerationLog>,
    /// Every evaluated architecture, in evaluation order.
    pub evaluations: Vec<(Architecture, Objectives)>,
}

fn evaluate_all<E: Evaluator + ?Sized>(evaluator: &E, archs: &[Architecture]) -> Result<Vec<Objectives>> {
    archs.par_iter().map(|a| evaluator.evaluate(a)).collect()
}

/// Draws up to `n` uniformly random architectures absent from `seen`,
/// adding them to it.
fn fresh_uniform<R: Rng + ?Sized>(
    space: &SearchSpace,
    seen: &mut BTreeSet<Architecture>,
    n: usize,
    rng: &mut R,
) -> Vec<Architecture> {
    let total = space.count_architectures();
    let mut out = Vec::with_capacity(n);
    while out.len() < n && num_bigint::BigUint::from(seen.len()) < total {
        let a = sample_uniform(space, rng);
        if seen.insert(a.clone()) {
            out.push(a);
        }
    }
    out
}

/// Attempts per offspring before falling back to a random unseen architecture.
const MAX_RETRIES: usize = 64;

/// Keeps the best `n` of `pool` by rank and then crowding distance.
fn environmental_selection(mut pool: Vec<Individual>, n: usize) -> Vec<Individual> {
    assign_rank_and_crowding(&mut pool);
    pool.sort_by(|a, b| crowded_cmp(a, b).then_with(|| a.arch.cmp(&b.arch)));
    pool.truncate(n);
    assign_rank_and_crowding(&mut pool);
    pool
}

fn first_front(pop: &[Individual]) -> Vec<Individual> {
    let mut front: Vec<Individual> = pop.iter().filter(|i| i.rank == 1).cloned().collect();
    front.sort_by(|a, b| a.arch.cmp(&b.arch));
    front
}

/// Elitist multi-objective evolutionary search.
///
/// Generation 1 evaluates `N` uniformly random architectures. Every later
/// generation breeds `N` unseen offspring from the current population by
/// tournament selection followed by mutation (probability `mutation_ratio`)
/// or crossover, evaluates them, and keeps the best `N` of parents and
/// offspring. No architecture is evaluated twice, so a full run spends
/// `N * G` evaluations unless the space runs out. The mutation policy is
/// updated on every generation's offspring with accuracy as reward.
pub fn run_search<E: Evaluator + ?Sized>(evaluator: &E, config: &SearchConfig) -> Result<SearchResult> {
    run_search_with(evaluator, config, |_| {})
}

/// [`run_search`] with a callback after every generation.
pub fn run_search_with<E: Evaluator + ?Sized>(
    evaluator: &E,
    config: &SearchConfig,
    mut on_generation: impl FnMut(&GenerationLog),
) -> Result<SearchResult> {
    config.validate()?;
    let space = evaluator.space();
    let (layers, choices) = (space.num_layers(), space.choices());
    let mut rng = stream_rng(config.seed, &[stream::SEARCH]);
    let mut seen = BTreeSet::new();
    let mut evaluations = Vec::with_capacity(config.evaluation_budget());
    let mut policy = MutatorPolicy::uniform(layers, choices);
    let mut history = RewardHistory::new(layers, choices);
    let mut logs = Vec::with_capacity(config.generations);
    let mut population: Vec<Individual> = Vec::new();

    for generation in 1..=config.generations {
        let offspring = if generation == 1 {
            fresh_uniform(space, &mut seen, config.population, &mut rng)
        } else {
            let mut kids = Vec::with_capacity(config.population);
            while kids.len() < config.population {
                let mut child = None;
                for _ in 0..MAX_RETRIES {
                    let candidate = if rng.random::<f64>() < config.mutation_ratio {
                        let parent = tournament_select(&population, &mut rng)?;
                        mutate_hierarchical(&parent.arch, space, &policy, &history, config, &mut rng)?.arch
                    } else {
                        let a = tournament_select(&population, &mut rng)?;
                        let b = tournament_select(&population, &mut rng)?;
                        crossover(&a.arch, &b.arch, &mut rng)?
                    };
                    if seen.insert(candidate.clone()) {
                        child = Some(candidate);
                        break;
                    }
                }
                match child {
                    Some(c) => kids.push(c),
                    None => match fresh_uniform(space, &mut seen, 1, &mut rng).pop() {
                        Some(c) => kids.push(c),
                        None => break,
                    },
                }
            }
            kids
        };
        let objs = evaluate_all(evaluator, &offspring)?;
        let mut batch = Vec::with_capacity(offspring.len());
        let mut pool = std::mem::take(&mut population);
        for (arch, obj) in offspring.into_iter().zip(objs) {
            if !obj.accuracy.is_finite() {
                return Err(Error::Diverged(format!("non-finite accuracy for {arch}")));
            }
            history.record(&arch, obj.accuracy);
            batch.push((arch.clone(), obj.accuracy));
            evaluations.push((arch.clone(), obj));
            pool.push(Individual::new(arch, obj));
        }
        policy_update(&mut policy, &batch, &config.policy)?;
        population = environmental_selection(pool, config.population);
        let log = GenerationLog {
            generation,
            evaluated: evaluations.len(),
            front: first_front(&population),
        };
        on_generation(&log);
        logs.push(log);
    }

    let mut by_accuracy = population.clone();
    by_accuracy.sort_by(|a, b| a.obj.accuracy.total_cmp(&b.obj.accuracy).then_with(|| a.arch.cmp(&b.arch)));
    let selected = evenly_spaced_indices(by_accuracy.len(), config.select_k)
        .into_iter()
        .map(|i| by_accuracy[i].clone())
        .collect();
    Ok(SearchResult {
        front: first_front(&population),
        population,
        selected,
        generations: logs,
        evaluations,
    })
}

pub type Evaluated = (Architecture, Objectives);

/// Evaluates `budget` distinct uniformly random architectures and returns
/// them with their non-dominated subset.
pub fn random_search_baseline<E: Evaluator + ?Sized>(
    evaluator: &E,
    budget: usize,
    seed: u64,
) -> Result<(Vec<Evaluated>, Vec<Evaluated>)> {
    let mut rng = stream_rng(seed, &[stream::SEARCH, 1]);
    let archs = fresh_uniform(evaluator.space(), &mut BTreeSet::new(), budget, &mut rng);
    let objs = evaluate_all(evaluator, &archs)?;
    let front_idx = non_dominated_sort(&objs).into_iter().next().unwrap_or_default();
    let all: Vec<(Architecture, Objectives)> = archs.into_iter().zip(objs).collect();
    let mut front: Vec<_> = front_idx.into_iter().map(|i| all[i].clone()).collect();
    front.sort_by(|a, b| a.0.cmp(&b.0));
    Ok((all, front))
}

/// Best accuracy among evaluations so far, after each generation.
pub fn best_accuracy_trace(result: &SearchResult) -> Vec<f64> {
    let mut per_gen: BTreeMap<usize, f64> = BTreeMap::new();
    let mut best = f64::NEG_INFINITY;
    let mut start = 0;
    for log in &result.generations {
        for (_, o) in &result.evaluations[start..log.evaluated] {
            best = best.max(o.accuracy);
        }
        start = log.evaluated;
        per_gen.insert(log.generation, best);
    }
    per_gen.into_values().collect()
}
