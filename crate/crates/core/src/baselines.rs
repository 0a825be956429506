//! Mixup, CutMix and Cutout baselines plus per-channel normalisation.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{value_err, Result};
use crate::raster::{Raster, CHANNELS};
use crate::sample::{Minibatch, Target};

fn draw_lambda<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(value_err!("beta parameter must be positive, got {alpha}"));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| value_err!("beta: {e}"))?;
    Ok(beta.sample(rng))
}

fn partner_permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    perm
}

fn mix_targets(a: &Target, b: &Target, weight_a: f64, num_classes: usize) -> Target {
    let weight_b = 1.0 - weight_a;
    let (ya, yb) = (a.to_distribution(num_classes), b.to_distribution(num_classes));
    Target::Soft(ya.iter().zip(&yb).map(|(p, q)| weight_a * p + weight_b * q).collect())
}

fn ensure_pairable(batch: &Minibatch) -> Result<()> {
    if batch.len() < 2 {
        return Err(value_err!("pairwise augmentation needs a batch of at least 2, got {}", batch.len()));
    }
    Ok(())
}

/// Mixup with `λ ~ Beta(alpha, alpha)` and a random partner permutation.
pub fn mixup_batch<R: Rng + ?Sized>(batch: &Minibatch, alpha: f64, rng: &mut R) -> Result<Minibatch> {
    ensure_pairable(batch)?;
    let lambda = draw_lambda(alpha, rng)?;
    let perm = partner_permutation(batch.len(), rng);
    mixup_with(batch, lambda, &perm)
}

/// Mixup for a fixed `λ` and partner assignment: `x̃_i = λ x_i + (1−λ) x_{p(i)}`.
pub fn mixup_with(batch: &Minibatch, lambda: f64, partners: &[usize]) -> Result<Minibatch> {
    ensure_pairable(batch)?;
    if !(0.0..=1.0).contains(&lambda) || partners.len() != batch.len() {
        return Err(value_err!("invalid mixup parameters: lambda {lambda}, {} partners", partners.len()));
    }
    let mut out = batch.clone();
    for (i, &j) in partners.iter().enumerate() {
        let (a, b) = (&batch.images[i], &batch.images[j]);
        a.ensure_same_shape(b)?;
        let mut mixed = a.clone();
        for (px, &q) in mixed.data_mut().iter_mut().zip(b.data()) {
            *px = (lambda * *px as f64 + (1.0 - lambda) * q as f64) as f32;
        }
        out.images[i] = mixed;
        out.targets[i] = mix_targets(&batch.targets[i], &batch.targets[j], lambda, batch.num_classes);
    }
    Ok(out)
}

/// Axis-aligned pixel rectangle `[top, bottom) × [left, right)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchBox {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl PatchBox {
    /// Box of `size_h × size_w` centred at `(cy, cx)`, clipped to the image.
    pub fn centred(cy: usize, cx: usize, size_h: usize, size_w: usize, height: usize, width: usize) -> Self {
        let top = cy.saturating_sub(size_h / 2);
        let left = cx.saturating_sub(size_w / 2);
        let bottom = (cy + size_h - size_h / 2).min(height);
        let right = (cx + size_w - size_w / 2).min(width);
        Self { top, left, bottom: bottom.max(top), right: right.max(left) }
    }

    pub fn area(&self) -> usize {
        (self.bottom - self.top) * (self.right - self.left)
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.top..self.bottom).contains(&y) && (self.left..self.right).contains(&x)
    }
}

/// CutMix with `λ ~ Beta(alpha, alpha)`: a patch of nominal area `(1−λ)·HW`
/// from a random partner is pasted at a uniform location.
pub fn cutmix_batch<R: Rng + ?Sized>(batch: &Minibatch, alpha: f64, rng: &mut R) -> Result<Minibatch> {
    ensure_pairable(batch)?;
    let lambda = draw_lambda(alpha, rng)?;
    let perm = partner_permutation(batch.len(), rng);
    let (h, w) = batch.images[0].shape();
    let ratio = libm::sqrt(1.0 - lambda);
    let (ph, pw) = ((h as f64 * ratio) as usize, (w as f64 * ratio) as usize);
    let boxes: Vec<PatchBox> = (0..batch.len())
        .map(|_| PatchBox::centred(rng.random_range(0..h), rng.random_range(0..w), ph, pw, h, w))
        .collect();
    cutmix_with(batch, &perm, &boxes)
}

/// CutMix for given partners and paste boxes. The partner's label weight is the
/// realised box area over the image area; the item keeps the complement.
pub fn cutmix_with(batch: &Minibatch, partners: &[usize], boxes: &[PatchBox]) -> Result<Minibatch> {
    ensure_pairable(batch)?;
    if partners.len() != batch.len() || boxes.len() != batch.len() {
        return Err(value_err!("cutmix needs one partner and one box per item"));
    }
    let mut out = batch.clone();
    for (i, (&j, patch)) in partners.iter().zip(boxes).enumerate() {
        let (a, b) = (&batch.images[i], &batch.images[j]);
        a.ensure_same_shape(b)?;
        if patch.bottom > a.height() || patch.right > a.width() {
            return Err(value_err!("patch {patch:?} exceeds image {}x{}", a.height(), a.width()));
        }
        let mut pasted = a.clone();
        for y in patch.top..patch.bottom {
            for x in patch.left..patch.right {
                pasted.set_pixel(y, x, b.pixel(y, x));
            }
        }
        let partner_weight = patch.area() as f64 / a.pixel_count() as f64;
        out.images[i] = pasted;
        out.targets[i] = mix_targets(&batch.targets[i], &batch.targets[j], 1.0 - partner_weight, batch.num_classes);
    }
    Ok(out)
}

/// Cutout: one `hole_size × hole_size` square per image, centred uniformly and
/// clipped at the borders, is set to `fill`.
pub fn cutout_batch<R: Rng + ?Sized>(batch: &Minibatch, hole_size: usize, fill: [f32; CHANNELS], rng: &mut R) -> Result<Minibatch> {
    let boxes = batch
        .images
        .iter()
        .map(|img| {
            let (h, w) = img.shape();
            if hole_size > h.min(w) {
                return Err(value_err!("cutout hole {hole_size} larger than image side {}", h.min(w)));
            }
            Ok(PatchBox::centred(rng.random_range(0..h), rng.random_range(0..w), hole_size, hole_size, h, w))
        })
        .collect::<Result<Vec<_>>>()?;
    cutout_with(batch, &boxes, fill)
}

pub fn cutout_with(batch: &Minibatch, boxes: &[PatchBox], fill: [f32; CHANNELS]) -> Result<Minibatch> {
    if boxes.len() != batch.len() {
        return Err(value_err!("cutout needs one box per item"));
    }
    let mut out = batch.clone();
    for (img, patch) in out.images.iter_mut().zip(boxes) {
        for y in patch.top..patch.bottom.min(img.height()) {
            for x in patch.left..patch.right.min(img.width()) {
                img.set_pixel(y, x, fill);
            }
        }
    }
    Ok(out)
}

/// Per-channel `(pixel − mean) / std`.
pub fn normalize(image: &Raster, mean: [f32; CHANNELS], std: [f32; CHANNELS]) -> Result<Raster> {
    if std.iter().any(|s| !(*s > 0.0)) {
        return Err(value_err!("normalisation std must be positive, got {std:?}"));
    }
    let mut out = image.clone();
    for px in out.data_mut().chunks_exact_mut(CHANNELS) {
        for c in 0..CHANNELS {
            px[c] = (px[c] - mean[c]) / std[c];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn batch(labels: &[usize], side: usize) -> Minibatch {
        Minibatch::new(
            labels.iter().enumerate().map(|(i, _)| Raster::filled(side, side, (i + 1) as f32 / 8.0)).collect(),
            labels.iter().map(|&l| Target::Class(l)).collect(),
            labels.iter().map(|_| "d".to_string()).collect(),
            7,
        )
        .unwrap()
    }

    #[test]
    fn mixup_endpoint_keeps_images() {
        let b = batch(&[2, 5], 4);
        let out = mixup_with(&b, 1.0, &[1, 0]).unwrap();
        assert_eq!(out.images, b.images);
        assert_eq!(out.targets[0], Target::Soft(vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn mixup_half_splits_labels() {
        let b = batch(&[2, 5], 4);
        let out = mixup_with(&b, 0.5, &[1, 0]).unwrap();
        let Target::Soft(v) = &out.targets[0] else { panic!() };
        assert_eq!(v[2], 0.5);
        assert_eq!(v[5], 0.5);
        assert_eq!(v.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn pairwise_methods_need_two_items() {
        let b = batch(&[1], 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(mixup_batch(&b, 0.2, &mut rng).is_err());
        assert!(cutmix_batch(&b, 0.2, &mut rng).is_err());
    }

    #[test]
    fn cutmix_empty_patch_is_identity() {
        let b = batch(&[0, 3], 8);
        let empty = PatchBox { top: 2, left: 2, bottom: 2, right: 2 };
        let out = cutmix_with(&b, &[1, 0], &[empty, empty]).unwrap();
        assert_eq!(out.images, b.images);
        assert_eq!(out.targets[0].to_distribution(7)[0], 1.0);
    }

    #[test]
    fn cutmix_quarter_patch_weight() {
        let b = batch(&[0, 3], 64);
        let patch = PatchBox::centred(32, 32, 32, 32, 64, 64);
        assert_eq!(patch.area(), 1024);
        let out = cutmix_with(&b, &[1, 0], &[patch, patch]).unwrap();
        let y = out.targets[0].to_distribution(7);
        assert_eq!(y[3], 0.25);
        assert_eq!(y[0], 0.75);
    }

    #[test]
    fn patch_box_clips_at_border() {
        let p = PatchBox::centred(0, 63, 10, 10, 64, 64);
        assert_eq!(p, PatchBox { top: 0, left: 58, bottom: 5, right: 64 });
    }

    #[test]
    fn cutout_bounds() {
        let b = batch(&[0, 1], 8);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(cutout_batch(&b, 0, [0.0; 3], &mut rng).unwrap(), b);
        assert!(cutout_batch(&b, 9, [0.0; 3], &mut rng).is_err());
        let full = PatchBox::centred(4, 4, 8, 8, 8, 8);
        let out = cutout_with(&b, &[full, full], [0.5; 3]).unwrap();
        assert!(out.images.iter().all(|im| im.data().iter().all(|&v| v == 0.5)));
    }

    #[test]
    fn normalize_arithmetic() {
        let img = Raster::from_vec(1, 2, vec![0.5, 0.5, 0.5, 1.0, 1.0, 1.0]).unwrap();
        let out = normalize(&img, [0.5; 3], [0.25; 3]).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0, 0.0, 2.0, 2.0, 2.0]);
        assert_eq!(normalize(&img, [0.0; 3], [1.0; 3]).unwrap(), img);
        assert!(normalize(&img, [0.0; 3], [1.0, 0.0, 1.0]).is_err());
    }
}
