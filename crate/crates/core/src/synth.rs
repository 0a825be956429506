//! Synthetic multi-style shape datasets.
//!
//! Class identity is the rendered shape; the style only changes how the shape is
//! drawn. Styles are fixed constants:
//!
//! * `flat-fill`: shape filled with one palette colour on a black background.
//! * `outline`: the 2 px inner border of the shape in the palette colour.
//! * `hatched`: diagonal stripes (2 px wide, 4 px period) clipped to the shape.
//! * `inverted`: `1 − flat-fill`, pixelwise.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{schema_err, value_err, Error, Result};
use crate::mask::Mask;
use crate::raster::{unit_from_u8, Raster};
use crate::sample::{DomainDataset, DomainSample};

pub const STROKE_WIDTH: usize = 2;
pub const HATCH_PERIOD: usize = 4;
pub const HATCH_WIDTH: usize = 2;

/// Fill colours as 8-bit levels; each instance picks one. Rendered images
/// therefore lie on the 8-bit grid and survive PNG round trips unchanged.
pub const PALETTE: [[u8; 3]; 6] = [
    [230, 51, 51],
    [51, 204, 77],
    [64, 89, 242],
    [242, 217, 51],
    [217, 77, 217],
    [51, 217, 230],
];

pub fn palette_color(index: usize) -> [f32; 3] {
    PALETTE[index].map(unit_from_u8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Style {
    #[serde(rename = "flat-fill")]
    FlatFill,
    #[serde(rename = "outline")]
    Outline,
    #[serde(rename = "hatched")]
    Hatched,
    #[serde(rename = "inverted")]
    Inverted,
}

impl Style {
    pub const ALL: [Style; 4] = [Style::FlatFill, Style::Outline, Style::Hatched, Style::Inverted];

    pub fn name(self) -> &'static str {
        match self {
            Style::FlatFill => "flat-fill",
            Style::Outline => "outline",
            Style::Hatched => "hatched",
            Style::Inverted => "inverted",
        }
    }
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Style {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Style::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| value_err!("unknown synthetic style {s}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
    Star,
    Cross,
    Ring,
    Bar,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 7] =
        [ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle, ShapeKind::Star, ShapeKind::Cross, ShapeKind::Ring, ShapeKind::Bar];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
            ShapeKind::Star => "star",
            ShapeKind::Cross => "cross",
            ShapeKind::Ring => "ring",
            ShapeKind::Bar => "bar",
        }
    }

    /// Membership test in shape-local coordinates scaled to the unit circle.
    fn contains(self, u: f64, v: f64) -> bool {
        let rho = libm::sqrt(u * u + v * v);
        match self {
            ShapeKind::Circle => rho <= 1.0,
            ShapeKind::Square => u.abs().max(v.abs()) <= 0.75,
            ShapeKind::Triangle => v >= -0.5 && v <= 1.0 - libm::sqrt(3.0) * u.abs(),
            ShapeKind::Star => {
                let sector = 2.0 * PI / 5.0;
                let angle = libm::atan2(u, v);
                let phi: f64 = (angle - sector * libm::floor(angle / sector)) / sector;
                let spike = (1.0 - 2.0 * phi).abs();
                rho <= 0.4 + 0.6 * spike
            }
            ShapeKind::Cross => (u.abs() <= 0.3 && v.abs() <= 0.9) || (v.abs() <= 0.3 && u.abs() <= 0.9),
            ShapeKind::Ring => (0.55..=1.0).contains(&rho),
            ShapeKind::Bar => u.abs() <= 1.0 && v.abs() <= 0.28,
        }
    }
}

/// Placement of one shape instance; shared between styles when rendering
/// paired examples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub center_y: f64,
    pub center_x: f64,
    pub radius: f64,
    pub rotation: f64,
    pub color: [f32; 3],
}

impl Geometry {
    pub fn random<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Self {
        let n = size as f64;
        Self {
            center_y: rng.random_range(0.38..0.62) * n,
            center_x: rng.random_range(0.38..0.62) * n,
            radius: rng.random_range(0.22..0.32) * n,
            rotation: rng.random_range(0.0..2.0 * PI),
            color: palette_color(rng.random_range(0..PALETTE.len())),
        }
    }
}

pub fn shape_mask(kind: ShapeKind, geometry: &Geometry, size: usize) -> Mask {
    let (s, c) = (libm::sin(geometry.rotation), libm::cos(geometry.rotation));
    Mask::from_fn(size, size, |y, x| {
        let dy = (y as f64 + 0.5 - geometry.center_y) / geometry.radius;
        let dx = (x as f64 + 0.5 - geometry.center_x) / geometry.radius;
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        // image rows grow downwards; flip so "up" in the shape is up on screen
        kind.contains(u, -v)
    })
}

/// Draws a region mask in the given style with the given colour.
pub fn render_mask(mask: &Mask, color: [f32; 3], style: Style) -> Raster {
    let (h, w) = (mask.height(), mask.width());
    let paint = match style {
        Style::FlatFill | Style::Inverted => mask.clone(),
        Style::Outline => mask.inner_border(STROKE_WIDTH),
        Style::Hatched => Mask::from_fn(h, w, |y, x| mask.get(y, x) && (x + y) % HATCH_PERIOD < HATCH_WIDTH),
    };
    let mut out = Raster::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            if paint.get(y, x) {
                out.set_pixel(y, x, color);
            }
        }
    }
    if style == Style::Inverted {
        out = out.map(|v| 1.0 - v).quantize_u8();
    }
    out
}

pub fn render_shape(kind: ShapeKind, geometry: &Geometry, size: usize, style: Style) -> Raster {
    render_mask(&shape_mask(kind, geometry, size), geometry.color, style)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticStyleSpec {
    pub n_classes: usize,
    pub styles: Vec<Style>,
    pub samples_per_class_per_style: usize,
    pub image_size: usize,
}

impl Default for SyntheticStyleSpec {
    fn default() -> Self {
        Self { n_classes: 7, styles: Style::ALL.to_vec(), samples_per_class_per_style: 50, image_size: 64 }
    }
}

impl SyntheticStyleSpec {
    pub fn validate(&self) -> Result<()> {
        if !(2..=ShapeKind::ALL.len()).contains(&self.n_classes) {
            return Err(schema_err!("synthetic n_classes must be in [2, {}], got {}", ShapeKind::ALL.len(), self.n_classes));
        }
        if self.styles.len() < 2 {
            return Err(schema_err!("synthetic data needs at least 2 styles, got {}", self.styles.len()));
        }
        for (i, s) in self.styles.iter().enumerate() {
            if self.styles[..i].contains(s) {
                return Err(schema_err!("style {s} listed twice"));
            }
        }
        if self.image_size < 16 {
            return Err(schema_err!("synthetic image_size must be >= 16, got {}", self.image_size));
        }
        if self.samples_per_class_per_style == 0 {
            return Err(schema_err!("samples_per_class_per_style must be positive"));
        }
        Ok(())
    }

    pub fn domain_names(&self) -> Vec<String> {
        self.styles.iter().map(|s| s.name().to_string()).collect()
    }

    pub fn class_names(&self) -> Vec<String> {
        ShapeKind::ALL[..self.n_classes].iter().map(|k| k.name().to_string()).collect()
    }
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of one instance; independent across styles, classes and indices.
pub fn instance_seed(seed: u64, style: Style, class: usize, index: usize) -> u64 {
    let style_idx = Style::ALL.iter().position(|s| *s == style).unwrap_or(0) as u64;
    let mut h = mix64(seed ^ 0x5eed_c1c1e_u64);
    for part in [style_idx, class as u64, index as u64] {
        h = mix64(h ^ part.wrapping_add(0x9e37_79b9_7f4a_7c15));
    }
    h
}

pub fn instance_geometry(seed: u64, style: Style, class: usize, index: usize, size: usize) -> Geometry {
    let mut rng = ChaCha8Rng::seed_from_u64(instance_seed(seed, style, class, index));
    Geometry::random(size, &mut rng)
}

/// One dataset per style, samples ordered by class then instance.
pub fn generate_synthetic_domains(spec: &SyntheticStyleSpec, seed: u64) -> Result<Vec<DomainDataset>> {
    spec.validate()?;
    let class_names = spec.class_names();
    spec.styles
        .iter()
        .map(|&style| {
            let mut samples = Vec::with_capacity(spec.n_classes * spec.samples_per_class_per_style);
            for (class, kind) in ShapeKind::ALL[..spec.n_classes].iter().enumerate() {
                for index in 0..spec.samples_per_class_per_style {
                    let g = instance_geometry(seed, style, class, index, spec.image_size);
                    samples.push(DomainSample {
                        image: render_shape(*kind, &g, spec.image_size, style),
                        label: class,
                        domain: style.name().to_string(),
                    });
                }
            }
            DomainDataset::new(style.name(), samples, class_names.clone())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_counts() {
        let spec = SyntheticStyleSpec { samples_per_class_per_style: 3, ..Default::default() };
        let ds = generate_synthetic_domains(&spec, 1).unwrap();
        assert_eq!(ds.len(), 4);
        assert!(ds.iter().all(|d| d.len() == 21 && d.num_classes() == 7));
        assert_eq!(ds[3].domain(), "inverted");
    }

    #[test]
    fn inverted_is_complement_of_flat_fill() {
        for (class, kind) in ShapeKind::ALL.iter().enumerate() {
            let g = instance_geometry(11, Style::FlatFill, class, 0, 32);
            let flat = render_shape(*kind, &g, 32, Style::FlatFill);
            let inv = render_shape(*kind, &g, 32, Style::Inverted);
            for (a, b) in flat.data().iter().zip(inv.data()) {
                assert!((*b - (1.0 - *a)).abs() <= 1e-6);
            }
            let bytes: Vec<u8> = flat.to_u8().iter().map(|v| 255 - v).collect();
            assert_eq!(inv.to_u8(), bytes);
            assert_eq!(inv, inv.quantize_u8());
        }
    }

    #[test]
    fn shapes_are_visible_and_distinct() {
        let g = Geometry { center_y: 32.0, center_x: 32.0, radius: 18.0, rotation: 0.3, color: palette_color(0) };
        let masks: Vec<Mask> = ShapeKind::ALL.iter().map(|k| shape_mask(*k, &g, 64)).collect();
        for (i, m) in masks.iter().enumerate() {
            assert!(m.count() > 150, "{} too small", ShapeKind::ALL[i].name());
            for other in &masks[..i] {
                assert_ne!(m, other);
            }
        }
    }

    #[test]
    fn spec_validation() {
        let bad = SyntheticStyleSpec { n_classes: 1, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SyntheticStyleSpec { styles: alloc::vec![Style::Outline], ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SyntheticStyleSpec { image_size: 8, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn style_names_round_trip() {
        for s in Style::ALL {
            assert_eq!(s.name().parse::<Style>().unwrap(), s);
        }
        assert!("sketch".parse::<Style>().is_err());
    }
}
