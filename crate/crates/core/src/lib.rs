//! Unpaired, cycle-consistent adversarial pre-training of relationship
//! features, with everything it needs: a small autodiff engine, the networks,
//! the losses, resumable trainers, a synthetic scene generator and the
//! evaluation harness.
//!
//! The guide in `book/` walks through each part with runnable snippets.

pub mod canonical;
pub mod dataworld;
pub mod error;
pub mod eval;
pub mod nets;
pub mod objectives;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/objectives.md")]
    mod objectives {}
    #[doc = include_str!("../../../book/src/worlds.md")]
    mod worlds {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
