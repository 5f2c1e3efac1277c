//! Relation discovery with a discrete-state variational autoencoder whose
//! training is regularized by must-link and cannot-link constraints derived
//! from knowledge-base embeddings.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod constraints;
pub mod datamodel;
pub mod dvae;
pub mod error;
pub mod eval;
pub mod kbembed;
pub mod linalg;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
