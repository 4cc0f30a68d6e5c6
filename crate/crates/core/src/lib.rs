//! Particle filters whose resampling step is driven by a sparse connectivity
//! matrix, with exact oracles for checking them and an experiment harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod error;
pub mod exec;
pub mod filter;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod phi;
pub mod rng;

pub use error::{Error, Result};
