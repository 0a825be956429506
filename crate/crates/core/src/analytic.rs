//! Closed-form image-to-image translators.
//!
//! These stand in for learned generators wherever the mixing machinery has to
//! be checked independently of GAN quality. `restyle` re-renders a synthetic
//! style image in another synthetic style by recovering the shape region and
//! colour, so it behaves like an ideal translator between synthetic domains.

use alloc::format;
use alloc::string::String;

use crate::error::{Error, Result};
use crate::folds::TranslatorId;
use crate::mask::Mask;
use crate::raster::{Raster, CHANNELS};
use crate::synth::{render_mask, Style, HATCH_PERIOD, HATCH_WIDTH};

/// Foreground threshold on the brightest channel (backgrounds are pure black).
const FOREGROUND_LEVEL: f32 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalyticTransform {
    Identity,
    /// `1 − x`; an involution.
    Invert,
    /// `(r, g, b) → (g, b, r)`.
    ChannelPermute,
    /// Zeroes the pixels on the hatch stripes.
    HatchOverlay,
    Restyle { from: Style, to: Style },
}

impl AnalyticTransform {
    pub const NAMES: [&'static str; 5] = ["identity", "invert", "channel-permute", "hatch-overlay", "restyle"];

    /// Resolves a manifest name for the translator `id`. `restyle` reads the
    /// endpoints of `id` as synthetic style names.
    pub fn from_name(name: &str, id: &TranslatorId) -> Result<Self> {
        Ok(match name {
            "identity" => Self::Identity,
            "invert" => Self::Invert,
            "channel-permute" => Self::ChannelPermute,
            "hatch-overlay" => Self::HatchOverlay,
            "restyle" => Self::Restyle {
                from: id.src.parse().map_err(|_| Error::Schema(format!("restyle needs synthetic style domains, got {}", id.src)))?,
                to: id.dst.parse().map_err(|_| Error::Schema(format!("restyle needs synthetic style domains, got {}", id.dst)))?,
            },
            other => return Err(Error::Schema(format!("unknown analytic translator {other}; known: {:?}", Self::NAMES))),
        })
    }

    pub fn name(&self) -> String {
        match self {
            Self::Identity => "identity".into(),
            Self::Invert => "invert".into(),
            Self::ChannelPermute => "channel-permute".into(),
            Self::HatchOverlay => "hatch-overlay".into(),
            Self::Restyle { .. } => "restyle".into(),
        }
    }

    pub fn apply(&self, image: &Raster) -> Raster {
        match *self {
            Self::Identity => image.clone(),
            Self::Invert => image.map(|v| 1.0 - v),
            Self::ChannelPermute => {
                let mut out = image.clone();
                for px in out.data_mut().chunks_exact_mut(CHANNELS) {
                    px.rotate_left(1);
                }
                out
            }
            Self::HatchOverlay => {
                let mut out = image.clone();
                for y in 0..image.height() {
                    for x in 0..image.width() {
                        if (x + y) % HATCH_PERIOD < HATCH_WIDTH {
                            out.set_pixel(y, x, [0.0; CHANNELS]);
                        }
                    }
                }
                out
            }
            Self::Restyle { from, to } => {
                let (region, color) = recover_region(image, from);
                render_mask(&region, color, to)
            }
        }
    }
}

/// Recovers the shape region and its mean colour from an image drawn in `style`.
pub fn recover_region(image: &Raster, style: Style) -> (Mask, [f32; 3]) {
    let upright = if style == Style::Inverted { image.map(|v| 1.0 - v) } else { image.clone() };
    let painted = Mask::from_fn(image.height(), image.width(), |y, x| {
        upright.pixel(y, x).iter().cloned().fold(f32::MIN, f32::max) > FOREGROUND_LEVEL
    });
    let mut acc = [0f64; 3];
    let mut n = 0usize;
    for y in 0..image.height() {
        for x in 0..image.width() {
            if painted.get(y, x) {
                let px = upright.pixel(y, x);
                for c in 0..3 {
                    acc[c] += px[c] as f64;
                }
                n += 1;
            }
        }
    }
    let color = if n == 0 { [0.0; 3] } else { [(acc[0] / n as f64) as f32, (acc[1] / n as f64) as f32, (acc[2] / n as f64) as f32] };
    let region = match style {
        Style::FlatFill | Style::Inverted => painted,
        Style::Outline => painted.fill_enclosed(),
        Style::Hatched => painted.close(1),
    };
    (region, color)
}
