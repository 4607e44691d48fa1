//! Evidence-memory text classifier.
//!
//! A small online learner that routes each question–answer pair through
//! an external bank of evidence cells: attention selects the best cell,
//! a learned gate blends the new example into it, and a classifier reads
//! the attention-weighted summary to score the answer. Because every
//! prediction is anchored to a concrete cell, validation errors can be
//! traced back to the training examples that shaped that cell.

pub mod data;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod hashing;
pub mod manifest;
pub mod memory;
pub mod model;
pub mod rng;
pub mod tracing;

pub mod cli;

pub use error::{EvmemError, Result};
