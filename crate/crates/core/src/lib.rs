//! From-scratch CPU deep-learning stack for artwork author identification.
//!
//! The crate contains everything needed to train and evaluate a cascade
//! CNN → Transformer classifier and its two single-branch ablations:
//!
//! - [`tensor`]/[`autodiff`]: dense tensors and a reverse-mode tape,
//! - [`nn`]: residual CNN blocks, patch embedding, multi-head attention,
//! - [`model`]: the three classifier variants behind one interface,
//! - [`optim`]: weighted cross-entropy, L2, Adam/SGD, plateau scheduling,
//! - [`data`]: manifests, splitting, image I/O, augmentation, synthetic styles,
//! - [`metrics`]: confusion matrices and comparison tables,
//! - [`train`]: the experiment runner used by the `artfusion` binary.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
