//! Co-evolutionary structured pruning of CycleGAN generators.
//!
//! Both generators of a small CycleGAN are compressed together: each one is
//! represented by a population of binary filter masks, and the two
//! populations are evolved alternately, each scored against the other's
//! current best compressed generator.

pub mod cli;
pub mod coevolution;
pub mod data;
pub mod error;
pub mod genome;
pub mod models;
pub mod tensor;

pub use error::{Error, Result};
