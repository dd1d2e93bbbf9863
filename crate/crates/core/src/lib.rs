//! Learning-to-rank for plausibility tasks.
//!
//! Ordinally labeled premise/hypothesis corpora are recast as `(p, h, h')`
//! triplets, a small pair scorer is trained under either a softmax
//! cross-entropy or a margin ranking objective, and the per-premise score
//! distributions of the two objectives are compared.

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod evaluation;
pub mod error;
pub mod objectives;
pub mod recast;
pub mod training;

pub use error::{Error, Result};
