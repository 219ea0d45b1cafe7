//! Ranked tree shapes as constrained ordered matchings, the adjacent-swap
//! Markov chain on them, and tools to measure how fast it mixes.

pub mod analysis;
pub mod coupling;
pub mod error;
pub mod io;
pub mod kernel;
pub mod rng;
pub mod sampler;
pub mod stats;
pub mod treespace;

pub use error::{Error, Result};
pub use treespace::{Budget, Label, Matching, Mode, StateSpace};
