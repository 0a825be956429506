//! Pure algorithmic core of the CycleMix domain-generalization toolkit.
//!
//! Everything in this crate is `no_std` with `alloc`: rasters, leave-one-domain-out
//! fold planning, simplex-weighted style mixing, the Mixup/CutMix/Cutout baselines,
//! GAN loss arithmetic, the synthetic multi-style shape renderer, analytic
//! translators and result-table aggregation. IO, neural networks and the CLI live
//! in the `cyclemix` crate.
#![no_std]
#![warn(rust_2018_idioms, unused_qualifications)]

extern crate alloc;

pub mod analytic;
pub mod baselines;
pub mod error;
pub mod folds;
pub mod losses;
pub mod mask;
pub mod metrics;
pub mod mixing;
pub mod raster;
pub mod report;
pub mod sample;
pub mod simplex;
pub mod standard;
pub mod synth;

pub use error::{Error, Result};
pub use folds::{enumerate_folds, required_pair_count, split_train_val, FoldPlan, TranslatorId};
pub use mixing::{
    apply_cyclemix_minibatch, cyclemix_image, MixMode, MixPolicy, TranslationProvider, WeightScope,
};
pub use raster::Raster;
pub use sample::{DomainDataset, DomainSample, Minibatch, Target};
pub use simplex::{sample_mix_weights, MixWeights};
