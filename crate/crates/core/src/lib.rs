//! Train small classifiers, prune them with magnitude, gradient, undecayed or
//! random scores, and measure how pruning shifts per-class recall.

pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod pruning;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
