//! Reference arithmetic for the translator training objectives.
//!
//! The network training code evaluates the same formulas on tensors; these
//! scalar versions define them and serve as test oracles.

use crate::error::{value_err, Error, Result};
use crate::raster::Raster;

/// Mean absolute pixel difference between an image and its reconstruction
/// after a round trip through both translators.
pub fn cycle_loss(x: &Raster, reconstructed: &Raster) -> Result<f64> {
    x.ensure_same_shape(reconstructed)?;
    let n = x.data().len();
    if n == 0 {
        return Ok(0.0);
    }
    let total: f64 = x.data().iter().zip(reconstructed.data()).map(|(a, b)| (*a as f64 - *b as f64).abs()).sum();
    Ok(total / n as f64)
}

fn mean_sq_offset(scores: &[f32], target: f64) -> f64 {
    scores.iter().map(|&s| (s as f64 - target) * (s as f64 - target)).sum::<f64>() / scores.len() as f64
}

/// Least-squares adversarial losses for one discriminator:
/// `loss_D = ½·mean((d_real−1)²) + ½·mean(d_fake²)` and
/// `loss_G = mean((d_fake−1)²)`.
pub fn adversarial_losses(d_real: &[f32], d_fake: &[f32]) -> Result<(f64, f64)> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(value_err!("discriminator score maps must be nonempty"));
    }
    if d_real.iter().chain(d_fake).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite discriminator score".into()));
    }
    let loss_d = 0.5 * mean_sq_offset(d_real, 1.0) + 0.5 * mean_sq_offset(d_fake, 0.0);
    let loss_g = mean_sq_offset(d_fake, 1.0);
    Ok((loss_d, loss_g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn cycle_loss_examples() {
        let x = Raster::filled(4, 4, 0.2);
        assert_eq!(cycle_loss(&x, &x).unwrap(), 0.0);
        let y = Raster::filled(4, 4, 0.7);
        assert!((cycle_loss(&x, &y).unwrap() - 0.5).abs() < 1e-7);
        assert!(cycle_loss(&x, &Raster::zeros(2, 4)).is_err());
    }

    #[test]
    fn adversarial_closed_forms() {
        assert_eq!(adversarial_losses(&[1.0; 4], &[0.0; 4]).unwrap(), (0.0, 1.0));
        assert_eq!(adversarial_losses(&[1.0; 4], &[1.0; 4]).unwrap(), (0.5, 0.0));
        assert_eq!(adversarial_losses(&[0.5; 4], &[0.5; 4]).unwrap(), (0.25, 0.25));
        assert!(matches!(adversarial_losses(&[f32::NAN], &[0.0]), Err(Error::Numeric(_))));
        assert!(adversarial_losses(&vec![], &[0.0]).is_err());
    }
}
