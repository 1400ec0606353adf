//! Multi-objective evolutionary search over a trained supernet.

mod config;
mod hypervolume;
mod mutation;
mod nsga;
mod search;

pub use config::{PolicyConfig, SearchConfig};
pub use hypervolume::{hypervolume, hypervolume_costs, reference_point};
pub use mutation::{
    crossover, mutate_hierarchical, policy_update, Mutation, MutationBranch, MutatorPolicy, PolicyUpdate,
    RewardHistory,
};
pub use nsga::{
    assign_rank_and_crowding, crowded_cmp, crowding_distance, dominates, non_dominated_sort, tournament_select,
    Fitness, Individual, Objectives,
};
pub use search::{
    best_accuracy_trace, random_search_baseline, run_search, run_search_with, Evaluator, GenerationLog,
    SearchResult, SupernetEvaluator,
};
