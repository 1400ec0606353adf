mod support;

use strictfair::search_space::{Activation, Multiplier, SearchSpace};
use support::check_gradients;

fn check(space: &SearchSpace, arch: &strictfair::search_space::Architecture, seed: u64) {
    let checked = check_gradients(space, arch, seed, 1e-5);
    assert!(checked > 50, "only {checked} components checked");
}

fn r(n: u64) -> Multiplier {
    Multiplier::integer(n).unwrap()
}

#[test]
fn plain_blocks_with_stem_and_head() {
    let space = SearchSpace::uniform(
        3,
        4,
        vec![5, 4, 5],
        &[(r(2), Activation::Relu, false), (r(1), Activation::Tanh, false), (r(1), Activation::Identity, false)],
    )
    .unwrap();
    for (i, arch) in ["0,0", "1,2", "2,1", "0,1"].iter().enumerate() {
        check(&space, &arch.parse().unwrap(), i as u64);
    }
}

#[test]
fn residual_blocks() {
    let space = SearchSpace::uniform(
        3,
        3,
        vec![4, 4, 5, 5],
        &[(r(2), Activation::Relu, false), (r(1), Activation::Tanh, true), (r(1), Activation::Identity, false)],
    )
    .unwrap()
    .with_residual(true);
    assert!(space.block_shape(0, 0).residual && !space.block_shape(1, 0).residual);
    for (i, arch) in ["0,0,0", "1,2,1", "2,1,0", "0,2,2"].iter().enumerate() {
        check(&space, &arch.parse().unwrap(), 30 + i as u64);
    }
}

#[test]
fn batchnorm_blocks() {
    let space = SearchSpace::uniform(
        2,
        3,
        vec![4, 6, 4],
        &[(r(2), Activation::Relu, true), (r(1), Activation::Tanh, true)],
    )
    .unwrap();
    for (i, arch) in ["0,0", "1,1", "0,1", "1,0"].iter().enumerate() {
        check(&space, &arch.parse().unwrap(), 10 + i as u64);
    }
}

#[test]
fn fractional_multiplier_without_stem_or_head() {
    let ops = vec![
        vec![
            strictfair::search_space::OpDescriptor {
                id: 0,
                hidden_multiplier: "3/2".parse().unwrap(),
                activation: Activation::Tanh,
                uses_batchnorm: false,
            },
            strictfair::search_space::OpDescriptor {
                id: 1,
                hidden_multiplier: "1/3".parse().unwrap(),
                activation: Activation::Relu,
                uses_batchnorm: true,
            },
        ];
        2
    ];
    let space = SearchSpace::new(4, 3, vec![4, 5, 3], ops, false, false).unwrap();
    for (i, arch) in ["0,0", "0,1", "1,0"].iter().enumerate() {
        check(&space, &arch.parse().unwrap(), 20 + i as u64);
    }
}
