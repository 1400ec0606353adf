use std::collections::BTreeSet;

use num_bigint::BigUint;
use proptest::prelude::*;
use strictfair::search_space::{enumerate_architectures, Activation, Architecture, Multiplier, SearchSpace};

fn space(m: usize, layers: usize) -> SearchSpace {
    let ops: Vec<_> = (0..m)
        .map(|_| (Multiplier::integer(1).unwrap(), Activation::Relu, false))
        .collect();
    SearchSpace::uniform(2, 2, vec![3; layers + 1], &ops).unwrap()
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    if m == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(m - 1) {
        for at in 0..=p.len() {
            let mut q = p.clone();
            q.insert(at, m - 1);
            out.push(q);
        }
    }
    out
}

/// Distinct unordered groups of models from all per-layer permutation pairs.
fn brute_force_step_configurations(m: usize) -> usize {
    let perms = permutations(m);
    let mut groups = BTreeSet::new();
    for a in &perms {
        for b in &perms {
            let mut models: Vec<Architecture> = (0..m).map(|k| Architecture::new(vec![a[k], b[k]])).collect();
            models.sort();
            groups.insert(models);
        }
    }
    groups.len()
}

#[test]
fn step_configurations_match_enumeration_for_two_layers() {
    for m in 1..=4 {
        let expected = brute_force_step_configurations(m);
        assert_eq!(space(m, 2).count_step_configurations(), BigUint::from(expected), "m = {m}");
    }
}

#[test]
fn step_configurations_for_six_choices_nineteen_layers() {
    assert_eq!(space(6, 19).count_step_configurations(), BigUint::from(720u32).pow(18));
}

proptest! {
    #[test]
    fn architecture_count_matches_enumeration(m in 1usize..6, layers in 1usize..6) {
        let s = space(m, layers);
        let all: Vec<Architecture> = enumerate_architectures(layers, m).collect();
        prop_assert_eq!(s.count_architectures(), BigUint::from(all.len()));
        prop_assert!(all.iter().all(|a| s.validate(a)));
        prop_assert!(all.windows(2).all(|w| w[0] < w[1]));
    }
}
