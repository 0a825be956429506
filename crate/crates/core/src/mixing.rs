//! Style mixing: an image is blended with simplex-weighted translations of
//! itself into every other source domain.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{value_err, Error, Result};
use crate::folds::{FoldPlan, TranslatorId};
use crate::raster::Raster;
use crate::sample::Minibatch;
use crate::simplex::{sample_mix_weights, MixWeights};

/// How the original image and the weighted translations are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixMode {
    /// `x + Σ a_j t_j`, range `[0, 2]`.
    Literal,
    /// `(x + Σ a_j t_j) / 2`, range `[0, 1]`.
    #[default]
    Convex,
}

/// Granularity at which mixing weights are redrawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScope {
    /// One draw per origin domain per minibatch, shared by that domain's mixed items.
    #[default]
    PerMinibatch,
    /// A fresh draw for every mixed item.
    PerImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixPolicy {
    /// Share of each minibatch that is replaced by mixed images.
    pub fraction: f64,
    pub mode: MixMode,
    pub weight_scope: WeightScope,
    pub enabled: bool,
    /// Symmetric Dirichlet concentration; 1 is uniform on the simplex.
    pub concentration: f64,
}

impl Default for MixPolicy {
    fn default() -> Self {
        Self { fraction: 0.5, mode: MixMode::Convex, weight_scope: WeightScope::PerMinibatch, enabled: true, concentration: 1.0 }
    }
}

impl MixPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(Error::Schema(format!("mix.fraction must be in [0, 1], got {}", self.fraction)));
        }
        if !(self.concentration.is_finite() && self.concentration > 0.0) {
            return Err(Error::Schema(format!("mix.concentration must be positive, got {}", self.concentration)));
        }
        Ok(())
    }

    /// `⌊fraction · batch⌋`, the exact number of mixed items in a batch.
    pub fn mixed_count(&self, batch: usize) -> usize {
        if !self.enabled {
            return 0;
        }
        // the epsilon absorbs products such as 0.29 * 100 = 28.999999999999996
        (libm::floor(self.fraction * batch as f64 + 1e-9) as usize).min(batch)
    }
}

/// Source of directed translations `G_ij(x)`.
pub trait TranslationProvider {
    fn translate(&self, id: &TranslatorId, image: &Raster) -> Result<Raster>;
}

impl<P: TranslationProvider + ?Sized> TranslationProvider for &P {
    fn translate(&self, id: &TranslatorId, image: &Raster) -> Result<Raster> {
        (**self).translate(id, image)
    }
}

/// Blends `x` with `Σ w_j · translations[j]`.
///
/// Arithmetic is carried out in `f64` per pixel and rounded once to `f32`.
pub fn cyclemix_image(x: &Raster, translations: &[Raster], weights: &MixWeights, mode: MixMode) -> Result<Raster> {
    if translations.len() != weights.len() {
        return Err(value_err!("{} translations but {} weights", translations.len(), weights.len()));
    }
    for t in translations {
        x.ensure_same_shape(t)?;
    }
    let scale = match mode {
        MixMode::Literal => 1.0,
        MixMode::Convex => 0.5,
    };
    let mut out = x.clone();
    for (i, px) in out.data_mut().iter_mut().enumerate() {
        let mut acc = *px as f64;
        for (t, &w) in translations.iter().zip(weights.as_slice()) {
            acc += w * t.data()[i] as f64;
        }
        *px = (acc * scale) as f32;
    }
    Ok(out)
}

/// Replaces `⌊fraction · B⌋` uniformly chosen items of `batch` by their mixed
/// versions. Labels are kept; untouched items are passed through as-is.
///
/// Every item must come from one of the fold's source domains; a target-domain
/// item is reported as [`Error::Leakage`] before any translation is requested.
pub fn apply_cyclemix_minibatch<P, R>(
    batch: &Minibatch,
    provider: &P,
    fold: &FoldPlan,
    policy: &MixPolicy,
    rng: &mut R,
) -> Result<Minibatch>
where
    P: TranslationProvider + ?Sized,
    R: Rng + ?Sized,
{
    policy.validate()?;
    for d in &batch.domains {
        if d == &fold.target {
            return Err(Error::Leakage(format!("minibatch item from target domain {d}")));
        }
        if !fold.is_source(d) {
            return Err(value_err!("minibatch item from unknown domain {d}"));
        }
    }
    let n_mix = policy.mixed_count(batch.len());
    let mut out = batch.clone();
    if n_mix == 0 {
        return Ok(out);
    }
    let k = fold.sources.len() - 1;
    if k == 0 {
        return Err(value_err!("style mixing needs at least two source domains"));
    }
    let mut chosen = rand::seq::index::sample(rng, batch.len(), n_mix).into_vec();
    chosen.sort_unstable();

    let mut shared: BTreeMap<&str, MixWeights> = BTreeMap::new();
    if policy.weight_scope == WeightScope::PerMinibatch {
        for src in &fold.sources {
            if chosen.iter().any(|&i| &batch.domains[i] == src) {
                shared.insert(src.as_str(), sample_mix_weights(k, policy.concentration, rng)?);
            }
        }
    }

    for &i in &chosen {
        let origin: &String = &batch.domains[i];
        let image = &batch.images[i];
        let translations = fold
            .other_sources(origin)
            .map(|dst| provider.translate(&TranslatorId { src: origin.clone(), dst: dst.clone() }, image))
            .collect::<Result<Vec<_>>>()?;
        let fresh;
        let weights = match policy.weight_scope {
            WeightScope::PerMinibatch => &shared[origin.as_str()],
            WeightScope::PerImage => {
                fresh = sample_mix_weights(k, policy.concentration, rng)?;
                &fresh
            }
        };
        out.images[i] = cyclemix_image(image, &translations, weights, policy.mode)?;
    }
    Ok(out)
}
