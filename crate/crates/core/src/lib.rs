//! Shapley population variable importance.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod cwls;
pub mod data;
pub mod error;
pub mod experiment;
pub mod inference;
pub mod kernel;
pub mod learners;
pub mod linalg;
pub mod pipeline;
pub mod plot;
pub mod predictiveness;
pub mod report;
pub mod rng;
pub mod simulate;

pub use error::{Result, SpvimError};
