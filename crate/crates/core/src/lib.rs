//! Constrained ("ultrafine") entanglement witnessing.
//!
//! Computes separable bounds of a test operator under an equality constraint
//! on a second operator, renders entanglement verdicts from measured
//! statistics, and evaluates multipartite partition bounds.

pub mod error;
pub mod multipartite;
pub mod numfmt;
pub mod optim;
pub mod povm;
pub mod qcore;
pub mod rng;
pub mod sampler;
pub mod witness;

pub use error::{Error, Result};
