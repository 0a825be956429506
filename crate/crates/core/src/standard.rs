//! Standard training-time augmentations applied by every method: random
//! resized crop, horizontal flip and colour jitter.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{value_err, Result};
use crate::raster::{Raster, CHANNELS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StandardAugment {
    pub enabled: bool,
    /// Range of the crop area as a fraction of the image area.
    pub crop_scale: [f64; 2],
    /// Range of the crop aspect ratio (width / height).
    pub crop_ratio: [f64; 2],
    pub flip_probability: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Maximum hue rotation as a fraction of a full turn (at most 0.5).
    pub hue: f64,
    pub grayscale_probability: f64,
}

impl Default for StandardAugment {
    fn default() -> Self {
        Self {
            enabled: true,
            crop_scale: [0.7, 1.0],
            crop_ratio: [3.0 / 4.0, 4.0 / 3.0],
            flip_probability: 0.5,
            brightness: 0.3,
            contrast: 0.3,
            saturation: 0.3,
            hue: 0.3,
            grayscale_probability: 0.1,
        }
    }
}

/// Concrete parameters of one augmentation draw.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentDraw {
    pub crop: [f32; 4],
    pub flip: bool,
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub hue_turns: f32,
    pub grayscale: bool,
}

impl StandardAugment {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.crop_scale;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(value_err!("crop_scale must satisfy 0 < lo <= hi <= 1, got {:?}", self.crop_scale));
        }
        let [rlo, rhi] = self.crop_ratio;
        if !(0.0 < rlo && rlo <= rhi) {
            return Err(value_err!("crop_ratio must satisfy 0 < lo <= hi, got {:?}", self.crop_ratio));
        }
        for (name, p) in [("flip_probability", self.flip_probability), ("grayscale_probability", self.grayscale_probability)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(value_err!("{name} must be in [0, 1], got {p}"));
            }
        }
        for (name, v) in [("brightness", self.brightness), ("contrast", self.contrast), ("saturation", self.saturation)] {
            if !(0.0..1.0).contains(&v) {
                return Err(value_err!("{name} jitter must be in [0, 1), got {v}"));
            }
        }
        if !(0.0..=0.5).contains(&self.hue) {
            return Err(value_err!("hue jitter must be in [0, 0.5], got {}", self.hue));
        }
        Ok(())
    }

    pub fn draw<R: Rng + ?Sized>(&self, height: usize, width: usize, rng: &mut R) -> AugmentDraw {
        let area = (height * width) as f64;
        let mut crop = [0.0, 0.0, height as f32, width as f32];
        for _ in 0..10 {
            let target = area * rng.random_range(self.crop_scale[0]..=self.crop_scale[1]);
            let log_ratio = rng.random_range(libm::log(self.crop_ratio[0])..=libm::log(self.crop_ratio[1]));
            let ratio = libm::exp(log_ratio);
            let w = libm::sqrt(target * ratio);
            let h = libm::sqrt(target / ratio);
            if w <= width as f64 && h <= height as f64 {
                let top = rng.random_range(0.0..=(height as f64 - h));
                let left = rng.random_range(0.0..=(width as f64 - w));
                crop = [top as f32, left as f32, h as f32, w as f32];
                break;
            }
        }
        let mut factor = |amount: f64| if amount > 0.0 { rng.random_range(1.0 - amount..=1.0 + amount) as f32 } else { 1.0 };
        let brightness = factor(self.brightness);
        let contrast = factor(self.contrast);
        let saturation = factor(self.saturation);
        let hue_turns = if self.hue > 0.0 { rng.random_range(-self.hue..=self.hue) as f32 } else { 0.0 };
        AugmentDraw {
            crop,
            flip: rng.random_bool(self.flip_probability),
            brightness,
            contrast,
            saturation,
            hue_turns,
            grayscale: rng.random_bool(self.grayscale_probability),
        }
    }

    pub fn apply<R: Rng + ?Sized>(&self, image: &Raster, rng: &mut R) -> Raster {
        if !self.enabled {
            return image.clone();
        }
        let draw = self.draw(image.height(), image.width(), rng);
        apply_draw(image, &draw)
    }
}

fn luma(px: &[f32]) -> f32 {
    0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]
}

/// Applies a fixed draw. Colour operations clamp to `[0, 1]` after each step.
pub fn apply_draw(image: &Raster, draw: &AugmentDraw) -> Raster {
    let (h, w) = image.shape();
    let [top, left, ch, cw] = draw.crop;
    let mut out = image.resample_window(top, left, ch, cw, h, w);
    if draw.flip {
        out = out.flip_horizontal();
    }
    let clamp = |v: f32| v.clamp(0.0, 1.0);
    for px in out.data_mut().chunks_exact_mut(CHANNELS) {
        for v in px.iter_mut() {
            *v = clamp(*v * draw.brightness);
        }
    }
    let mean_luma = out.data().chunks_exact(CHANNELS).map(luma).sum::<f32>() / out.pixel_count() as f32;
    for px in out.data_mut().chunks_exact_mut(CHANNELS) {
        for v in px.iter_mut() {
            *v = clamp(draw.contrast * *v + (1.0 - draw.contrast) * mean_luma);
        }
        let y = luma(px);
        for v in px.iter_mut() {
            *v = clamp(draw.saturation * *v + (1.0 - draw.saturation) * y);
        }
        if draw.hue_turns != 0.0 {
            rotate_hue(px, draw.hue_turns);
        }
        if draw.grayscale {
            let y = luma(px);
            px.fill(y);
        }
    }
    out
}

/// Rotates chroma in YIQ space by `turns` of a full circle.
fn rotate_hue(px: &mut [f32], turns: f32) {
    let (r, g, b) = (px[0], px[1], px[2]);
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    let i = 0.596 * r - 0.274 * g - 0.322 * b;
    let q = 0.211 * r - 0.523 * g + 0.312 * b;
    let angle = turns * 2.0 * core::f32::consts::PI;
    let (s, c) = (libm::sinf(angle), libm::cosf(angle));
    let (i2, q2) = (i * c - q * s, i * s + q * c);
    px[0] = (y + 0.956 * i2 + 0.621 * q2).clamp(0.0, 1.0);
    px[1] = (y - 0.272 * i2 - 0.647 * q2).clamp(0.0, 1.0);
    px[2] = (y - 1.106 * i2 + 1.703 * q2).clamp(0.0, 1.0);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn outputs_stay_in_unit_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = Raster::from_vec(8, 8, (0..192).map(|i| (i % 17) as f32 / 16.0).collect()).unwrap();
        let aug = StandardAugment::default();
        aug.validate().unwrap();
        for _ in 0..50 {
            let out = aug.apply(&img, &mut rng);
            assert_eq!(out.shape(), img.shape());
            assert!(out.in_range(0.0, 1.0));
        }
    }

    #[test]
    fn disabled_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = Raster::filled(4, 4, 0.3);
        assert_eq!(StandardAugment::disabled().apply(&img, &mut rng), img);
    }

    #[test]
    fn neutral_draw_is_identity() {
        let img = Raster::from_vec(2, 2, (0..12).map(|i| i as f32 / 12.0).collect()).unwrap();
        let draw = AugmentDraw {
            crop: [0.0, 0.0, 2.0, 2.0],
            flip: false,
            brightness: 1.0,
            contrast: 1.0,
            saturation: 1.0,
            hue_turns: 0.0,
            grayscale: false,
        };
        let out = apply_draw(&img, &draw);
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn bad_parameters_rejected() {
        let aug = StandardAugment { crop_scale: [0.9, 0.5], ..StandardAugment::default() };
        assert!(aug.validate().is_err());
        let aug = StandardAugment { hue: 0.7, ..StandardAugment::default() };
        assert!(aug.validate().is_err());
    }
}
