//! A small dense-network engine: parameter storage, forward and backward
//! passes, SGD with momentum, cosine learning-rate decay, datasets and
//! checkpoints.
//!
//! Parameters are stored as `f32`; every forward, backward and reduction runs
//! in `f64`.

pub mod checkpoint;
pub mod data;
mod network;
mod optim;
mod params;

pub use network::{
    accuracy, backward, forward, softmax_cross_entropy, Batch, ForwardCache, Mode, PathGrad, BN_EPS,
    BN_MOMENTUM,
};
pub use optim::{cosine_lr, SgdMomentum};
pub use params::{BlockSlot, BnSlot, DenseSlot, GradBuffer, InitScheme, Layout, ParamSet, Tensor, TensorKind};
