//! Three-channel floating point images stored channel-last (`HWC`).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{value_err, Result};

/// Number of colour channels carried by every raster.
pub const CHANNELS: usize = 3;

/// A `height × width × 3` image with `f32` samples, row-major, channel-last.
///
/// Pixel values are nominally in `[0, 1]`; the literal CycleMix mode produces
/// values up to 2 and normalisation produces arbitrary reals, so the range is
/// not enforced by the type itself (see [`Raster::in_range`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self { height, width, data: vec![value; height * width * CHANNELS] }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * CHANNELS {
            return Err(value_err!(
                "raster buffer has {} samples, expected {}x{}x{}",
                data.len(),
                height,
                width,
                CHANNELS
            ));
        }
        Ok(Self { height, width, data })
    }

    /// Builds a raster from 8-bit samples, mapping `v` to `v / 255`.
    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        let data = bytes.iter().map(|&b| unit_from_u8(b)).collect();
        Self::from_vec(height, width, data)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    fn offset(&self, y: usize, x: usize) -> usize {
        (y * self.width + x) * CHANNELS
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f32; CHANNELS] {
        let o = self.offset(y, x);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; CHANNELS]) {
        let o = self.offset(y, x);
        self.data[o..o + CHANNELS].copy_from_slice(&rgb);
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self { height: self.height, width: self.width, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn same_shape(&self, other: &Raster) -> bool {
        self.shape() == other.shape()
    }

    pub fn ensure_same_shape(&self, other: &Raster) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(value_err!(
                "shape mismatch: {}x{} vs {}x{}",
                self.height,
                self.width,
                other.height,
                other.width
            ))
        }
    }

    pub fn in_range(&self, lo: f32, hi: f32) -> bool {
        self.data.iter().all(|v| (lo..=hi).contains(v))
    }

    /// Snaps every sample onto the 8-bit grid used by lossless image files.
    pub fn quantize_u8(&self) -> Self {
        self.map(|v| unit_from_u8(unit_to_u8(v)))
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| unit_to_u8(v)).collect()
    }

    /// Per-channel mean over all pixels.
    pub fn channel_mean(&self) -> [f32; CHANNELS] {
        let mut acc = [0f64; CHANNELS];
        for px in self.data.chunks_exact(CHANNELS) {
            for c in 0..CHANNELS {
                acc[c] += px[c] as f64;
            }
        }
        let n = self.pixel_count().max(1) as f64;
        [(acc[0] / n) as f32, (acc[1] / n) as f32, (acc[2] / n) as f32]
    }

    /// Mirrors the image left to right.
    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set_pixel(y, self.width - 1 - x, self.pixel(y, x));
            }
        }
        out
    }

    /// Bilinear resampling of the window `[top, top+h) × [left, left+w)` (fractional
    /// coordinates allowed) onto an `out_h × out_w` grid, sampling at pixel centres.
    pub fn resample_window(&self, top: f32, left: f32, h: f32, w: f32, out_h: usize, out_w: usize) -> Self {
        let mut out = Self::zeros(out_h, out_w);
        let sy = h / out_h as f32;
        let sx = w / out_w as f32;
        for oy in 0..out_h {
            let fy = top + (oy as f32 + 0.5) * sy - 0.5;
            for ox in 0..out_w {
                let fx = left + (ox as f32 + 0.5) * sx - 0.5;
                out.set_pixel(oy, ox, self.bilinear(fy, fx));
            }
        }
        out
    }

    pub fn resize(&self, out_h: usize, out_w: usize) -> Self {
        if (out_h, out_w) == self.shape() {
            return self.clone();
        }
        self.resample_window(0.0, 0.0, self.height as f32, self.width as f32, out_h, out_w)
    }

    fn bilinear(&self, fy: f32, fx: f32) -> [f32; CHANNELS] {
        let max_y = (self.height - 1) as f32;
        let max_x = (self.width - 1) as f32;
        let fy = fy.clamp(0.0, max_y);
        let fx = fx.clamp(0.0, max_x);
        let y0 = libm::floorf(fy) as usize;
        let x0 = libm::floorf(fx) as usize;
        let y1 = (y0 + 1).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let ty = fy - y0 as f32;
        let tx = fx - x0 as f32;
        let (a, b, c, d) = (self.pixel(y0, x0), self.pixel(y0, x1), self.pixel(y1, x0), self.pixel(y1, x1));
        let mut px = [0f32; CHANNELS];
        for ch in 0..CHANNELS {
            let top = a[ch] + (b[ch] - a[ch]) * tx;
            let bottom = c[ch] + (d[ch] - c[ch]) * tx;
            px[ch] = top + (bottom - top) * ty;
        }
        px
    }
}

#[inline]
pub fn unit_to_u8(v: f32) -> u8 {
    libm::roundf(v.clamp(0.0, 1.0) * 255.0) as u8
}

#[inline]
pub fn unit_from_u8(b: u8) -> f32 {
    b as f32 / 255.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Raster::from_vec(2, 2, vec![0.0; 11]).is_err());
        assert!(Raster::from_vec(2, 2, vec![0.0; 12]).is_ok());
    }

    #[test]
    fn quantize_is_idempotent_and_matches_u8_roundtrip() {
        let r = Raster::from_vec(1, 2, vec![0.1, 0.5, 0.77, 1.0, 0.0, 0.333]).unwrap();
        let q = r.quantize_u8();
        assert_eq!(q, q.quantize_u8());
        assert_eq!(Raster::from_u8(1, 2, &r.to_u8()).unwrap(), q);
    }

    #[test]
    fn flip_twice_is_identity() {
        let r = Raster::from_vec(1, 3, (0..9).map(|v| v as f32 / 9.0).collect()).unwrap();
        assert_eq!(r.flip_horizontal().pixel(0, 0), r.pixel(0, 2));
        assert_eq!(r.flip_horizontal().flip_horizontal(), r);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let r = Raster::filled(8, 8, 0.25);
        let s = r.resize(5, 3);
        assert!(s.data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }
}
