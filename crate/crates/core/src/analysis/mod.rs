//! Ranking fidelity and representation analysis of trained supernets.

mod histogram;
mod ranking;
mod similarity;
mod tau;

pub use histogram::{oneshot_accuracies, oneshot_histogram, sample_architectures, Histogram, OneShotSample};
pub use ranking::{
    compare_methods, evenly_spaced_indices, fill_standalone_cache, rank_supernet, MethodRanking, RankingProtocol,
    StandaloneCache,
};
pub use similarity::{
    cosine_similarity, cross_block_similarity, similarity_from_outputs, standalone_block_similarity, SimilarityReport,
};
pub use tau::{accuracy_gap, accuracy_range, kendall_tau, kendall_tau_values, AccuracyGap, RankedItem, RankingPair};
