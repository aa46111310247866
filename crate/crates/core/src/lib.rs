//! Coarse-to-fine representation learning at desk scale.
//!
//! An instance encoder is pretrained from labels attached to whole sets of
//! instances, frozen, and then used to fit few-shot classifiers for
//! fine-grained labels. The crate also measures the quantities that govern
//! how well that transfer works: excess-risk scaling curves, an empirical
//! central-condition estimate, and an empirical relative-Lipschitz constant.

pub mod cli;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod losses;
pub mod models;
pub mod pipeline;
pub mod selftest;
pub mod tensor;

pub use error::{Error, Result};
