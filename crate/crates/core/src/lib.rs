//! Hierarchical task/action intention estimation for teleoperated assembly.

pub mod baselines;
pub mod cli;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod losses;
pub mod model;
pub mod pipeline;
pub mod stream;
pub mod taxonomy;
pub mod training;

pub use error::{Error, Result};

// Compile and run the guide's snippets and the README's as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/taxonomy.md")]
    mod taxonomy {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/streaming.md")]
    mod streaming {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
