//! Identity-decoupled anonymization on closed-form linear-Gaussian worlds.
//!
//! The crate implements the replacement-identity rejection sampler, the
//! disentanglement and multi-oracle privacy losses, mutual-information
//! estimators, and a verifier that checks each leakage/utility inequality
//! numerically against exact Gaussian ground truth.

pub mod encoder;
pub mod error;
pub mod estimators;
pub mod gallery;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod mine;
pub mod objectives;
pub mod runner;
pub mod bounds;
pub mod config;
pub mod stats;
pub mod threat;
pub mod world;

pub use error::{Error, Result};
