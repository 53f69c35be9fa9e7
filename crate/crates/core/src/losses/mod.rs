//! Objective terms: Chamfer texture losses, the Chamfer mask loss,
//! regularizers, and the IoU/L1 baselines.

mod baseline;
mod chamfer_texture;
mod features;
mod mask;

pub use baseline::{iou, iou_mask_loss, l1_image_loss, l1_loss, l1_mask_loss, latent_reg};
pub use chamfer_texture::{
    appearance_only_distance, chamfer_set_distance, chamfer_set_distance_exhaustive,
    chamfer_set_distance_grad, ChamferTexParams, SpatialTerm, TextureLossGrad, EPS_S_SWEEP,
};
pub use features::{extract_features, features_backward, FeaturePoints, FEATURE_DIM, FEATURE_STRIDE};
pub use mask::{chamfer_2d_exhaustive, chamfer_mask_loss, chamfer_mask_loss_grad, MaskTarget};

use crate::error::{Error, Result};
use crate::render::{image_to_points, Image, Mask, PixelPoints};
use crate::tensorcore::{Real, Rng};

/// Weights of the five objective terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights<F> {
    pub w_pct: F,
    pub w_fct: F,
    pub w_cm: F,
    pub w_smooth: F,
    pub w_z: F,
}

impl<F: Real> Default for LossWeights<F> {
    fn default() -> Self {
        Self {
            w_pct: F::one(),
            w_fct: F::lit(0.05),
            w_cm: F::lit(10.0),
            w_smooth: F::lit(0.00005),
            w_z: F::lit(0.05),
        }
    }
}

impl<F: Real> LossWeights<F> {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("w_pct", self.w_pct),
            ("w_fct", self.w_fct),
            ("w_cm", self.w_cm),
            ("w_smooth", self.w_smooth),
            ("w_z", self.w_z),
        ];
        for (name, w) in all {
            if !(w >= F::zero()) || !w.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {w}")));
            }
        }
        Ok(())
    }
}

/// A loss value with its gradient on the pixels of the first image.
#[derive(Debug, Clone)]
pub struct ImageLoss<F> {
    pub value: F,
    /// `dL/d rgb`, one entry per pixel in raster order.
    pub grad: Vec<[F; 3]>,
}

/// Spreads per-point RGB gradients back onto a full-resolution pixel grid.
pub fn scatter_pixel_grad<F: Real>(points: &PixelPoints<F>, grad_attrs: &[F], n_pixels: usize) -> Vec<[F; 3]> {
    let mut out = vec![[F::zero(); 3]; n_pixels];
    for (k, &p) in points.pixels.iter().enumerate() {
        for c in 0..3 {
            out[p][c] += grad_attrs[k * 3 + c];
        }
    }
    out
}

/// Pixel-level Chamfer texture loss; the rendered side is sampled first.
pub fn pixel_chamfer_texture_loss<F: Real>(
    rendered: (&Image<F>, &Mask),
    input: (&Image<F>, &Mask),
    n_sample: usize,
    p: &ChamferTexParams<F>,
    rng: &mut Rng,
) -> Result<F> {
    let a = image_to_points(rendered.0, rendered.1, n_sample, rng)?;
    let b = image_to_points(input.0, input.1, n_sample, rng)?;
    chamfer_set_distance(&a.set, &b.set, p)
}

pub fn pixel_chamfer_texture_loss_grad<F: Real>(
    rendered: (&Image<F>, &Mask),
    input: (&Image<F>, &Mask),
    n_sample: usize,
    p: &ChamferTexParams<F>,
    rng: &mut Rng,
) -> Result<ImageLoss<F>> {
    let a = image_to_points(rendered.0, rendered.1, n_sample, rng)?;
    let b = image_to_points(input.0, input.1, n_sample, rng)?;
    let r = chamfer_set_distance_grad(&a.set, &b.set, p)?;
    let n = rendered.0.width * rendered.0.height;
    Ok(ImageLoss {
        value: r.value,
        grad: scatter_pixel_grad(&a, &r.grad_a, n),
    })
}

/// Feature-level Chamfer texture loss against precomputed input features.
pub fn feature_chamfer_texture_loss_with<F: Real>(
    rendered: (&Image<F>, &Mask),
    input: &FeaturePoints<F>,
    p: &ChamferTexParams<F>,
    want_grad: bool,
) -> Result<ImageLoss<F>> {
    let fa = extract_features(rendered.0, rendered.1)?;
    if !want_grad {
        return Ok(ImageLoss {
            value: chamfer_set_distance(&fa.set, &input.set, p)?,
            grad: Vec::new(),
        });
    }
    let r = chamfer_set_distance_grad(&fa.set, &input.set, p)?;
    Ok(ImageLoss {
        value: r.value,
        grad: features_backward(&fa, &r.grad_a, rendered.1),
    })
}

pub fn feature_chamfer_texture_loss<F: Real>(
    rendered: (&Image<F>, &Mask),
    input: (&Image<F>, &Mask),
    p: &ChamferTexParams<F>,
) -> Result<F> {
    let fb = extract_features(input.0, input.1)?;
    Ok(feature_chamfer_texture_loss_with(rendered, &fb, p, false)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{mask_to_points, ColoredPointSet};
    use crate::tensorcore::grad_check;

    fn set(points: &[([f64; 2], [f64; 3])]) -> ColoredPointSet<f64> {
        let pos = points.iter().map(|p| p.0).collect();
        let attrs = points.iter().flat_map(|p| p.1).collect();
        ColoredPointSet::new(pos, attrs, 3).unwrap()
    }

    fn random_set(rng: &mut Rng, n: usize, dim: usize) -> ColoredPointSet<f64> {
        let pos = (0..n).map(|_| [2.0 * rng.uniform() - 1.0, 2.0 * rng.uniform() - 1.0]).collect();
        let attrs = (0..n * dim).map(|_| rng.uniform()).collect();
        ColoredPointSet::new(pos, attrs, dim).unwrap()
    }

    fn params() -> ChamferTexParams<f64> {
        ChamferTexParams::default()
    }

    #[test]
    fn default_weights_and_params() {
        let w = LossWeights::<f64>::default();
        assert_eq!((w.w_pct, w.w_fct, w.w_cm, w.w_smooth, w.w_z), (1.0, 0.05, 10.0, 0.00005, 0.05));
        let p = params();
        assert_eq!((p.eps_s, p.eps_a, p.alpha), (0.9, 1.0, 1.0));
        assert_eq!(EPS_S_SWEEP, [0.999, 0.99, 0.98, 0.95, 0.9]);
        let bad = LossWeights { w_cm: -1.0, ..w };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn identical_sets_give_eps_a() {
        let mut rng = Rng::new(3);
        let a = random_set(&mut rng, 200, 3);
        assert_eq!(chamfer_set_distance(&a, &a, &params()).unwrap(), 1.0);
    }

    #[test]
    fn single_pair_inside_and_outside_tolerance() {
        let a = set(&[([0.0, 0.0], [1.0, 0.0, 0.0])]);
        let near = set(&[([0.05, 0.0], [0.0, 0.0, 0.0])]);
        let far = set(&[([0.3, 0.0], [0.0, 0.0, 0.0])]);
        assert_eq!(chamfer_set_distance(&a, &near, &params()).unwrap(), 2.0);
        assert!((chamfer_set_distance(&a, &far, &params()).unwrap() - 2.4).abs() < 1e-12);
    }

    #[test]
    fn symmetric_and_matches_exhaustive() {
        let mut rng = Rng::new(11);
        for dim in [3, 8] {
            let a = random_set(&mut rng, 300, dim);
            let b = random_set(&mut rng, 170, dim);
            let ab = chamfer_set_distance(&a, &b, &params()).unwrap();
            assert_eq!(ab, chamfer_set_distance(&b, &a, &params()).unwrap());
            let ex = chamfer_set_distance_exhaustive(&a, &b, &params()).unwrap();
            assert!((ab - ex).abs() <= 1e-12, "{ab} vs {ex}");
            assert!(ab >= 1.0);
        }
    }

    #[test]
    fn plateau_then_monotone() {
        let a = set(&[([0.0, 0.0], [0.5, 0.5, 0.5])]);
        let at = |d: f64| {
            let b = set(&[([d, 0.0], [0.2, 0.5, 0.5])]);
            chamfer_set_distance(&a, &b, &params()).unwrap()
        };
        let base = at(0.0);
        for d in [0.01, 0.05, 0.09] {
            assert_eq!(at(d), base);
        }
        let mut prev = base;
        for d in [0.11, 0.2, 0.5, 1.0] {
            let v = at(d);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn appearance_only_ignores_positions() {
        let a = set(&[([0.0, 0.0], [1.0, 0.0, 0.0])]);
        let far = set(&[([0.9, 0.9], [1.0, 0.0, 0.0])]);
        assert_eq!(appearance_only_distance(&a, &far, &params()).unwrap(), 1.0);
        assert!(chamfer_set_distance(&a, &far, &params()).unwrap() > 1.0);
    }

    #[test]
    fn rejects_bad_operands() {
        let a = set(&[([0.0, 0.0], [1.0, 0.0, 0.0])]);
        let empty = ColoredPointSet::<f64>::new(vec![], vec![], 3).unwrap();
        assert!(chamfer_set_distance(&a, &empty, &params()).is_err());
        let wide = ColoredPointSet::new(vec![[0.0, 0.0]], vec![0.0; 8], 8).unwrap();
        assert!(chamfer_set_distance(&a, &wide, &params()).is_err());
        let p = ChamferTexParams { eps_s: 1.0, ..params() };
        assert!(chamfer_set_distance(&a, &a, &p).is_err());
    }

    #[test]
    fn texture_gradient_matches_finite_differences() {
        let mut rng = Rng::new(5);
        let a = random_set(&mut rng, 40, 3);
        let b = random_set(&mut rng, 30, 3);
        let g = chamfer_set_distance_grad(&a, &b, &params()).unwrap();
        let mut both = a.attrs.clone();
        both.extend_from_slice(&b.attrs);
        let mut analytic = g.grad_a.clone();
        analytic.extend_from_slice(&g.grad_b);
        let report = grad_check(
            |x: &[f64]| {
                let aa = ColoredPointSet::new(a.positions.clone(), x[..120].to_vec(), 3).unwrap();
                let bb = ColoredPointSet::new(b.positions.clone(), x[120..].to_vec(), 3).unwrap();
                chamfer_set_distance(&aa, &bb, &params()).unwrap()
            },
            &both,
            &analytic,
            1e-7,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn mask_loss_examples() {
        let pts = vec![[0.1, 0.2], [-0.3, 0.4], [0.5, -0.6]];
        assert_eq!(chamfer_mask_loss(&pts, &pts).unwrap(), 0.0);
        let v: f64 = chamfer_mask_loss(&[[0.0, 0.0]], &[[0.2, 0.0], [-0.2, 0.0]]).unwrap();
        assert!((v - 0.2).abs() < 1e-15);
    }

    #[test]
    fn mask_loss_matches_exhaustive_and_is_translation_consistent() {
        let mut rng = Rng::new(9);
        let mut pts = |n: usize| -> Vec<[f64; 2]> {
            (0..n).map(|_| [2.0 * rng.uniform() - 1.0, 2.0 * rng.uniform() - 1.0]).collect()
        };
        let a = pts(250);
        let b = pts(900);
        let fast = chamfer_mask_loss(&a, &b).unwrap();
        let slow = chamfer_2d_exhaustive(&a, &b).unwrap();
        assert!((fast - slow).abs() <= 1e-12);
        let shift = |s: &[[f64; 2]]| s.iter().map(|p| [p[0] + 0.125, p[1] - 0.25]).collect::<Vec<_>>();
        let moved = chamfer_mask_loss(&shift(&a), &shift(&b)).unwrap();
        assert!((fast - moved).abs() <= 1e-12);
        assert!(chamfer_mask_loss(&[], &b).is_err());
    }

    #[test]
    fn mask_loss_gradient() {
        let mut rng = Rng::new(21);
        let sf: Vec<[f64; 2]> = (0..500).map(|_| [rng.uniform() - 0.5, rng.uniform() - 0.5]).collect();
        let sv: Vec<f64> = (0..60).map(|_| 1.4 * rng.uniform() - 0.7).collect();
        let target = MaskTarget::new(&sf).unwrap();
        let as_pts = |x: &[f64]| x.chunks(2).map(|c| [c[0], c[1]]).collect::<Vec<_>>();
        let (_, g) = target.loss_grad(&as_pts(&sv)).unwrap();
        let flat: Vec<f64> = g.iter().flatten().copied().collect();
        let report = grad_check(|x: &[f64]| target.loss(&as_pts(x)).unwrap(), &sv, &flat, 1e-7).unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    fn square_mask(size: usize, r0: usize, c0: usize, side: usize) -> Mask {
        let mut m = Mask::empty(size, size);
        for r in r0..r0 + side {
            for c in c0..c0 + side {
                m.data[r * size + c] = true;
            }
        }
        m
    }

    #[test]
    fn iou_and_l1_cases() {
        let a = square_mask(32, 4, 4, 8);
        assert_eq!(iou_mask_loss::<f64>(&a, &a).unwrap(), 0.0);
        assert_eq!(l1_mask_loss::<f64>(&a, &a).unwrap(), 0.0);
        let far = square_mask(32, 20, 20, 8);
        assert_eq!(iou_mask_loss::<f64>(&a, &far).unwrap(), 1.0);
        let half = square_mask(32, 4, 8, 8);
        assert!((iou_mask_loss::<f64>(&a, &half).unwrap() - (1.0 - 1.0 / 3.0)).abs() < 1e-15);
        let none = Mask::empty(32, 32);
        assert_eq!(iou_mask_loss::<f64>(&none, &none).unwrap(), 0.0);
        assert!(iou_mask_loss::<f64>(&a, &Mask::empty(16, 16)).is_err());
        assert!(l1_loss(&[1.0, 2.0], &[1.0]).is_err());
        assert_eq!(l1_loss(&[1.0, 2.0], &[0.0, 4.0]).unwrap(), 1.5);
    }

    #[test]
    fn latent_reg_values() {
        assert_eq!(latent_reg(&[0.0f64; 64]).0, 0.0);
        assert_eq!(latent_reg(&[1.0f64; 64]).0, 1.0);
    }

    fn noisy_image(size: usize, seed: u64) -> Image<f64> {
        let mut rng = Rng::new(seed);
        let data = (0..size * size).map(|_| [rng.uniform(), rng.uniform(), rng.uniform()]).collect();
        Image::new(size, size, data).unwrap()
    }

    fn blob_mask(size: usize) -> Mask {
        let mut m = Mask::empty(size, size);
        for r in 0..size {
            for c in 0..size {
                let (y, x) = (r as f64 - 0.45 * size as f64, c as f64 - 0.55 * size as f64);
                m.data[r * size + c] = x * x + 1.6 * y * y < (0.35 * size as f64).powi(2);
            }
        }
        m
    }

    #[test]
    fn constant_image_has_flat_sobel() {
        let img = Image::filled(32, 32, [0.3, 0.6, 0.9]);
        let mask = Mask::new(32, 32, vec![true; 1024]).unwrap();
        let f = extract_features(&img, &mask).unwrap();
        for i in 0..f.set.len() {
            let a = f.set.attr(i);
            assert_eq!((a[0], a[1]), (0.0, 0.0));
        }
    }

    #[test]
    fn feature_count_bound() {
        let img = noisy_image(128, 1);
        let mask = Mask::new(128, 128, vec![true; 128 * 128]).unwrap();
        assert_eq!(extract_features(&img, &mask).unwrap().set.len(), 1024);
        let partial = extract_features(&img, &blob_mask(128)).unwrap();
        assert!(partial.set.len() < 1024);
        assert!(extract_features(&img, &Mask::empty(128, 128)).is_err());
    }

    #[test]
    fn features_commute_with_horizontal_flip() {
        let img = noisy_image(64, 2);
        let mask = blob_mask(64);
        let f = extract_features(&img, &mask).unwrap();
        let g = extract_features(&img.flip_horizontal(), &mask.flip_horizontal()).unwrap();
        assert_eq!(f.set.len(), g.set.len());
        let cw = 64 / FEATURE_STRIDE;
        let index: std::collections::HashMap<usize, usize> =
            g.cells.iter().enumerate().map(|(k, &c)| (c, k)).collect();
        let mut worst = 0.0f64;
        for (k, &cell) in f.cells.iter().enumerate() {
            let mirrored = (cell / cw) * cw + (cw - 1 - cell % cw);
            let j = index[&mirrored];
            let (a, b) = (f.set.attr(k), g.set.attr(j));
            for ch in 0..FEATURE_DIM {
                let expect = if ch == 0 { -a[ch] } else { a[ch] };
                worst = worst.max((expect - b[ch]).abs());
            }
            assert!((f.set.positions[k][0] + g.set.positions[j][0]).abs() < 1e-12);
        }
        assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn identical_images_give_eps_a_for_both_texture_losses() {
        let img = noisy_image(48, 4);
        let mask = blob_mask(48);
        let mut rng = Rng::new(0);
        let p = params();
        let pct = pixel_chamfer_texture_loss((&img, &mask), (&img, &mask), 100_000, &p, &mut rng).unwrap();
        assert_eq!(pct, 1.0);
        let fct = feature_chamfer_texture_loss((&img, &mask), (&img, &mask), &p).unwrap();
        assert_eq!(fct, 1.0);
    }

    #[test]
    fn feature_loss_gradient_matches_finite_differences() {
        let size = 24;
        let img = noisy_image(size, 6);
        let target = noisy_image(size, 7);
        let mask = blob_mask(size);
        let p = params();
        let fb = extract_features(&target, &mask).unwrap();
        let g = feature_chamfer_texture_loss_with((&img, &mask), &fb, &p, true).unwrap();
        let flat: Vec<f64> = img.data.iter().flatten().copied().collect();
        let analytic: Vec<f64> = g.grad.iter().flatten().copied().collect();
        let eval = |x: &[f64]| {
            let data = x.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
            let im = Image::new(size, size, data).unwrap();
            feature_chamfer_texture_loss_with((&im, &mask), &fb, &p, false).unwrap().value
        };
        let report = grad_check(eval, &flat, &analytic, 1e-7).unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn pixel_loss_gradient_reaches_sampled_pixels_only() {
        let img = noisy_image(32, 8);
        let target = noisy_image(32, 9);
        let mask = blob_mask(32);
        let p = params();
        let mut rng = Rng::new(1);
        let g = pixel_chamfer_texture_loss_grad((&img, &mask), (&target, &mask), 50, &p, &mut rng).unwrap();
        let touched = g.grad.iter().filter(|v| v.iter().any(|x| *x != 0.0)).count();
        assert!(touched > 0 && touched <= 50);
        for (px, v) in g.grad.iter().enumerate() {
            if !mask.data[px] {
                assert_eq!(*v, [0.0; 3]);
            }
        }
    }

    fn checkerboard(size: usize, square: usize, shift: usize) -> Image<f64> {
        let data = (0..size * size)
            .map(|p| {
                let (r, c) = (p / size, (p % size + size - shift) % size);
                if (r / square + c / square) % 2 == 0 {
                    [0.9, 0.8, 0.1]
                } else {
                    [0.1, 0.2, 0.7]
                }
            })
            .collect();
        Image::new(size, size, data).unwrap()
    }

    #[test]
    fn misalignment_is_tolerated_while_l1_explodes() {
        let size = 64;
        let mut rng = Rng::new(12);
        let mut rendered = checkerboard(size, 4, 0);
        for px in &mut rendered.data {
            for c in px.iter_mut() {
                *c += 0.02 * (rng.uniform() - 0.5);
            }
        }
        let aligned = checkerboard(size, 4, 0);
        let shifted = checkerboard(size, 4, 4);
        let mask = Mask::new(size, size, vec![true; size * size]).unwrap();
        let p = params();
        let mut r = Rng::new(0);
        let mut pct = |input: &Image<f64>| {
            pixel_chamfer_texture_loss((&rendered, &mask), (input, &mask), 8096, &p, &mut r).unwrap()
        };
        let (c0, c1) = (pct(&aligned), pct(&shifted));
        let l0 = l1_image_loss(&rendered, &aligned).unwrap();
        let l1 = l1_image_loss(&rendered, &shifted).unwrap();
        assert!(((c1 - c0) / c0).abs() < 0.05, "{c0} -> {c1}");
        assert!(l1 > 5.0 * l0, "{l0} -> {l1}");
    }

    #[test]
    fn mask_points_of_center_pixel() {
        let mut m = Mask::empty(65, 65);
        m.data[32 * 65 + 32] = true;
        let p: Vec<[f64; 2]> = mask_to_points(&m).unwrap();
        assert_eq!(p.len(), 1);
        assert!(p[0][0].abs() < 1.0 / 65.0 && p[0][1].abs() < 1.0 / 65.0);
    }
}
