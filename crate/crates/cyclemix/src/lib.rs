//! Dataset IO, translator registry and cache, CycleGAN training, classifier
//! benchmark and command-line front end for CycleMix style-mixing domain
//! generalization. Pure algorithms come from [`cyclemix_core`].

pub mod cache;
pub mod classifier;
pub mod cli;
pub mod config;
pub mod cyclegan;
pub mod data;
pub mod error;
pub mod nn;
pub mod pipeline;
pub mod trainer;
pub mod translators;

pub use error::{Error, Result};
