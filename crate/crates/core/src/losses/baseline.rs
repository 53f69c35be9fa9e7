//! Conventional losses kept for comparison: IoU and L1.

use crate::error::{Error, Result};
use crate::render::{Image, Mask};
use crate::tensorcore::Real;

/// `1 - |A ∩ B| / |A ∪ B|`; two empty masks give 0.
pub fn iou_mask_loss<F: Real>(a: &Mask, b: &Mask) -> Result<F> {
    Ok(F::one() - iou(a, b)?)
}

pub fn iou<F: Real>(a: &Mask, b: &Mask) -> Result<F> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::shape("mask sizes differ"));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        return Ok(F::one());
    }
    Ok(F::lit(inter as f64) / F::lit(union as f64))
}

/// Mean absolute difference of two equal-length value arrays.
pub fn l1_loss<F: Real>(a: &[F], b: &[F]) -> Result<F> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("lengths differ: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::empty("l1 operand"));
    }
    let s: F = a.iter().zip(b).map(|(x, y)| (*x - *y).abs()).sum();
    Ok(s / F::lit(a.len() as f64))
}

pub fn l1_mask_loss<F: Real>(a: &Mask, b: &Mask) -> Result<F> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::shape("mask sizes differ"));
    }
    let differ = a.data.iter().zip(&b.data).filter(|(x, y)| x != y).count();
    Ok(F::lit(differ as f64) / F::lit(a.data.len() as f64))
}

/// Mean absolute difference over all pixels and channels.
pub fn l1_image_loss<F: Real>(a: &Image<F>, b: &Image<F>) -> Result<F> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::shape("image sizes differ"));
    }
    let fa: Vec<F> = a.data.iter().flatten().copied().collect();
    let fb: Vec<F> = b.data.iter().flatten().copied().collect();
    l1_loss(&fa, &fb)
}

/// `|z|^2 / dim(z)` and its gradient.
pub fn latent_reg<F: Real>(z: &[F]) -> (F, Vec<F>) {
    let n = F::lit(z.len().max(1) as f64);
    let v = z.iter().map(|x| *x * *x).sum::<F>() / n;
    let g = z.iter().map(|x| F::lit(2.0) * *x / n).collect();
    (v, g)
}
