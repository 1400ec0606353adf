pub mod analysis;
pub mod engine;
pub mod error;
pub mod evolution;
pub mod experiment;
pub mod fairness;
pub mod io;
pub mod rng;
pub mod search_space;
pub mod supernet;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/search_space.md")]
    mod search_space {}
    #[doc = include_str!("../../../book/src/fairness.md")]
    mod fairness {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/search.md")]
    mod search {}
    #[doc = include_str!("../../../book/src/ranking.md")]
    mod ranking {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
