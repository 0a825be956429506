//! Random mixing weights on the probability simplex.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{value_err, Result};

/// Tolerance on `Σ w = 1` for a valid weight vector.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Nonnegative style-mixing magnitudes, one per translated domain, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixWeights(Vec<f64>);

impl MixWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(value_err!("mix weights must have at least one entry"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(value_err!("mix weights must be finite and nonnegative: {weights:?}"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(value_err!("mix weights sum to {sum}, expected 1"));
        }
        Ok(Self(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Draws `k` weights from a symmetric Dirichlet with the given concentration.
///
/// A concentration of 1 is the flat Dirichlet, i.e. the uniform distribution
/// on the simplex. Sampling normalises independent `Gamma(concentration, 1)`
/// variates.
pub fn sample_mix_weights<R: Rng + ?Sized>(k: usize, concentration: f64, rng: &mut R) -> Result<MixWeights> {
    if k < 1 {
        return Err(value_err!("need k >= 1 mixing weights, got {k}"));
    }
    if !(concentration.is_finite() && concentration > 0.0) {
        return Err(value_err!("dirichlet concentration must be positive, got {concentration}"));
    }
    let gamma = Gamma::new(concentration, 1.0).map_err(|e| value_err!("gamma: {e}"))?;
    loop {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        // all-zero draws only happen through underflow at tiny concentrations
        if total > 0.0 && total.is_finite() {
            return Ok(MixWeights(draws.into_iter().map(|g| g / total).collect()));
        }
    }
}
