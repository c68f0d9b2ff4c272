//! A desk-scale laboratory for robust mutual learning: two students taught
//! by each other's mean teachers, with prototype-based pseudo-label
//! rectification, CutMix consistency and stage-wise retraining.

pub mod augment;
pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod netcore;
pub mod protobank;
pub mod rectify;
pub mod tensor;
pub mod trainer;

pub use error::{Result, RmlError};

/// The seeded generator used for every stochastic choice in the lab.
pub type LabRng = rand_chacha::ChaCha8Rng;
