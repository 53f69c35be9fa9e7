//! Forward rendering and extraction of point sets from images.

mod image;
mod raster;

pub use image::{pixel_center, Image, Mask};
pub use raster::{rasterize, RenderOutput, TexelWeight, MIN_RESOLUTION};

use crate::error::{Error, Result};
use crate::tensorcore::{Real, Rng};

/// Pixels drawn per image for the pixel-level texture loss.
pub const DEFAULT_N_SAMPLE: usize = 8096;

/// `H x W` RGB grid in UV space; row 0 is `v = 0` (the north pole).
#[derive(Debug, Clone, PartialEq)]
pub struct TextureMap<F> {
    pub h: usize,
    pub w: usize,
    pub data: Vec<[F; 3]>,
}

impl<F: Real> TextureMap<F> {
    pub fn uniform(h: usize, w: usize, color: [F; 3]) -> Self {
        Self {
            h,
            w,
            data: vec![color; h * w],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.w == 0 || self.data.len() != self.h * self.w {
            return Err(Error::shape(format!(
                "texture {}x{} holds {} texels",
                self.h,
                self.w,
                self.data.len()
            )));
        }
        Ok(())
    }

    /// Clamps every channel to `[0, 1]`.
    pub fn clamp_unit(&mut self) {
        for t in &mut self.data {
            for c in t.iter_mut() {
                *c = c.max(F::zero()).min(F::one());
            }
        }
    }
}

/// Points in the normalized image frame with appearance vectors of width `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColoredPointSet<F> {
    pub positions: Vec<[F; 2]>,
    /// Row-major `len x dim`.
    pub attrs: Vec<F>,
    pub dim: usize,
}

impl<F: Real> ColoredPointSet<F> {
    pub fn new(positions: Vec<[F; 2]>, attrs: Vec<F>, dim: usize) -> Result<Self> {
        if dim == 0 || attrs.len() != positions.len() * dim {
            return Err(Error::shape(format!(
                "{} points with attribute width {dim} need {} values, got {}",
                positions.len(),
                positions.len() * dim,
                attrs.len()
            )));
        }
        Ok(Self {
            positions,
            attrs,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    #[inline]
    pub fn attr(&self, i: usize) -> &[F] {
        &self.attrs[i * self.dim..(i + 1) * self.dim]
    }
}

/// A pixel-derived point set together with the source pixel of each point.
#[derive(Debug, Clone)]
pub struct PixelPoints<F> {
    pub set: ColoredPointSet<F>,
    pub pixels: Vec<usize>,
}

/// Samples `min(n_sample, |foreground|)` distinct foreground pixels uniformly
/// without replacement; attributes are the RGB values.
pub fn image_to_points<F: Real>(
    image: &Image<F>,
    mask: &Mask,
    n_sample: usize,
    rng: &mut Rng,
) -> Result<PixelPoints<F>> {
    if (image.width, image.height) != (mask.width, mask.height) {
        return Err(Error::shape("image and mask sizes differ"));
    }
    let fg = mask.foreground();
    if fg.is_empty() {
        return Err(Error::empty("mask has no foreground pixel"));
    }
    let pick = rng.sample_indices(fg.len(), n_sample);
    let pixels: Vec<usize> = pick.into_iter().map(|k| fg[k]).collect();
    Ok(gather_points(image, &pixels))
}

/// Every foreground pixel, in raster order.
pub fn image_to_points_all<F: Real>(image: &Image<F>, mask: &Mask) -> Result<PixelPoints<F>> {
    if (image.width, image.height) != (mask.width, mask.height) {
        return Err(Error::shape("image and mask sizes differ"));
    }
    let fg = mask.foreground();
    if fg.is_empty() {
        return Err(Error::empty("mask has no foreground pixel"));
    }
    Ok(gather_points(image, &fg))
}

pub(crate) fn gather_points<F: Real>(image: &Image<F>, pixels: &[usize]) -> PixelPoints<F> {
    let mut positions = Vec::with_capacity(pixels.len());
    let mut attrs = Vec::with_capacity(pixels.len() * 3);
    for &p in pixels {
        positions.push(pixel_center(p / image.width, p % image.width, image.width, image.height));
        attrs.extend_from_slice(&image.data[p]);
    }
    PixelPoints {
        set: ColoredPointSet {
            positions,
            attrs,
            dim: 3,
        },
        pixels: pixels.to_vec(),
    }
}

/// One normalized point per foreground pixel center.
pub fn mask_to_points<F: Real>(mask: &Mask) -> Result<Vec<[F; 2]>> {
    let fg = mask.foreground();
    if fg.is_empty() {
        return Err(Error::empty("mask has no foreground pixel"));
    }
    Ok(fg
        .into_iter()
        .map(|p| pixel_center(p / mask.width, p % mask.width, mask.width, mask.height))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::CameraPose;
    use crate::geometry::build_sphere_template;
    use crate::tensorcore::{grad_check, Rng};

    fn sphere() -> crate::geometry::MeshTopology<f64> {
        build_sphere_template(16, 16).unwrap()
    }

    fn pose() -> CameraPose<f64> {
        CameraPose {
            scale: 0.6,
            translation: [0.05, -0.02],
            quat: [0.95, 0.2, 0.1, -0.15],
        }
    }

    fn random_texture(h: usize, w: usize, rng: &mut Rng) -> TextureMap<f64> {
        TextureMap {
            h,
            w,
            data: (0..h * w)
                .map(|_| [rng.uniform(), rng.uniform(), rng.uniform()])
                .collect(),
        }
    }

    #[test]
    fn constant_texture_paints_constant_color() {
        let t = sphere();
        let tex = TextureMap::uniform(8, 8, [1.0, 0.0, 0.0]);
        let out = rasterize(&t.base_vertices, &t.faces, &t.uv, &tex, &pose(), 32, [0.5; 3]).unwrap();
        assert!(out.mask.count() > 0);
        for (p, &m) in out.mask.data.iter().enumerate() {
            if m {
                assert_eq!(out.image.data[p], [1.0, 0.0, 0.0]);
            } else {
                assert_eq!(out.image.data[p], [0.5; 3]);
            }
        }
    }

    #[test]
    fn coverage_matches_point_in_triangle_scan() {
        let t = sphere();
        let tex = TextureMap::uniform(4, 4, [0.2; 3]);
        let p = pose();
        let out = rasterize(&t.base_vertices, &t.faces, &t.uv, &tex, &p, 40, [0.0; 3]).unwrap();
        let proj = crate::camera::project_weak_perspective(&p, &t.base_vertices).unwrap();
        // Same-side test on every triangle for every pixel.
        let mut count = 0;
        for row in 0..40 {
            for col in 0..40 {
                let q: [f64; 2] = pixel_center(row, col, 40, 40);
                let hit = t.faces.iter().any(|f| {
                    let v: Vec<[f64; 2]> = f.iter().map(|&i| proj.points[i as usize]).collect();
                    let s = |a: [f64; 2], b: [f64; 2]| {
                        (b[0] - a[0]) * (q[1] - a[1]) - (b[1] - a[1]) * (q[0] - a[0])
                    };
                    let (d0, d1, d2) = (s(v[0], v[1]), s(v[1], v[2]), s(v[2], v[0]));
                    let area = s(v[0], v[1]) + s(v[1], v[2]) + s(v[2], v[0]);
                    area != 0.0
                        && ((d0 >= 0.0 && d1 >= 0.0 && d2 >= 0.0)
                            || (d0 <= 0.0 && d1 <= 0.0 && d2 <= 0.0))
                });
                count += hit as usize;
            }
        }
        assert_eq!(out.mask.count(), count);
    }

    #[test]
    fn doubling_resolution_quadruples_coverage() {
        let t = build_sphere_template::<f64>(32, 32).unwrap();
        let tex = TextureMap::uniform(4, 4, [0.2; 3]);
        let a = rasterize(&t.base_vertices, &t.faces, &t.uv, &tex, &pose(), 64, [0.0; 3]).unwrap();
        let b = rasterize(&t.base_vertices, &t.faces, &t.uv, &tex, &pose(), 128, [0.0; 3]).unwrap();
        let ratio = b.mask.count() as f64 / a.mask.count() as f64;
        assert!((3.5..=4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn texel_weights_are_partitions_of_unity() {
        let t = sphere();
        let mut rng = Rng::new(3);
        let tex = random_texture(8, 8, &mut rng);
        let out = rasterize(&t.base_vertices, &t.faces, &t.uv, &tex, &pose(), 32, [0.5; 3]).unwrap();
        for p in 0..32 * 32 {
            let w = out.weights_for(p);
            if out.mask.data[p] {
                assert!((1..=4).contains(&w.len()));
                let s: f64 = w.iter().map(|t| t.weight).sum();
                assert!((s - 1.0).abs() < 1e-9);
            } else {
                assert!(w.is_empty());
            }
            assert_eq!(out.mask.data[p], out.depth[p] < f64::INFINITY);
        }
        assert_eq!(out.shade(&tex).unwrap(), out.image);
    }

    #[test]
    fn rendering_is_deterministic() {
        let t = sphere();
        let mut rng = Rng::new(4);
        let tex = random_texture(8, 8, &mut rng);
        let a = rasterize(&t.base_vertices, &t.faces, &t.uv, &tex, &pose(), 32, [0.5; 3]).unwrap();
        let b = rasterize(&t.base_vertices, &t.faces, &t.uv, &tex, &pose(), 32, [0.5; 3]).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.texel_weights, b.texel_weights);
    }

    #[test]
    fn off_screen_mesh_renders_background() {
        let t = sphere();
        let tex = TextureMap::uniform(4, 4, [1.0; 3]);
        let far = CameraPose {
            translation: [10.0, 10.0],
            ..pose()
        };
        let out = rasterize(&t.base_vertices, &t.faces, &t.uv, &tex, &far, 16, [0.5; 3]).unwrap();
        assert_eq!(out.mask.count(), 0);
        assert!(rasterize(&t.base_vertices, &t.faces, &t.uv, &tex, &far, 8, [0.5; 3]).is_err());
    }

    #[test]
    fn texture_gradient_matches_finite_differences() {
        let t = sphere();
        let mut rng = Rng::new(5);
        let tex = random_texture(6, 6, &mut rng);
        let out = rasterize(&t.base_vertices, &t.faces, &t.uv, &tex, &pose(), 24, [0.5; 3]).unwrap();
        let coef: Vec<[f64; 3]> = (0..24 * 24).map(|_| [rng.normal(), rng.normal(), rng.normal()]).collect();
        let f = |x: &[f64]| {
            let tx = TextureMap {
                h: 6,
                w: 6,
                data: x.chunks(3).map(|c| [c[0], c[1], c[2]]).collect(),
            };
            let img = out.shade(&tx).unwrap();
            img.data
                .iter()
                .zip(&coef)
                .map(|(p, c)| (p[0] * c[0] + p[1] * c[1] + p[2] * c[2]).sin())
                .sum::<f64>()
        };
        let grad_px: Vec<[f64; 3]> = out
            .image
            .data
            .iter()
            .zip(&coef)
            .map(|(p, c)| {
                let d = (p[0] * c[0] + p[1] * c[1] + p[2] * c[2]).cos();
                [d * c[0], d * c[1], d * c[2]]
            })
            .map(|g| g)
            .collect();
        let masked: Vec<[f64; 3]> = grad_px
            .iter()
            .zip(&out.mask.data)
            .map(|(g, &m)| if m { *g } else { [0.0; 3] })
            .collect();
        let analytic: Vec<f64> = out.texture_grad(&masked).into_iter().flatten().collect();
        let x: Vec<f64> = tex.data.iter().flatten().copied().collect();
        let r = grad_check(f, &x, &analytic, 1e-6).unwrap();
        assert!(r.max_rel_err < 1e-4, "{r:?}");
    }

    #[test]
    fn image_points_exhaustive_and_deterministic() {
        let mut mask = Mask::empty(8, 8);
        for p in [3, 10, 20, 63] {
            mask.data[p] = true;
        }
        let img = Image::filled(8, 8, [0.1, 0.2, 0.3]);
        let all = image_to_points(&img, &mask, 100, &mut Rng::new(1)).unwrap();
        assert_eq!(all.pixels, vec![3, 10, 20, 63]);
        assert_eq!(all.set.attr(2), &[0.1, 0.2, 0.3]);
        let a = image_to_points(&img, &mask, 2, &mut Rng::new(9)).unwrap();
        let b = image_to_points(&img, &mask, 2, &mut Rng::new(9)).unwrap();
        assert_eq!(a.pixels, b.pixels);
        assert_eq!(a.set.len(), 2);
        assert!(image_to_points(&img, &Mask::empty(8, 8), 5, &mut Rng::new(1)).is_err());
        assert_eq!(DEFAULT_N_SAMPLE, 8096);
    }

    #[test]
    fn mask_points() {
        let mut mask = Mask::empty(65, 65);
        mask.data[32 * 65 + 32] = true;
        let p: Vec<[f64; 2]> = mask_to_points(&mask).unwrap();
        assert!(p[0][0].abs() <= 1.0 / 65.0 && p[0][1].abs() <= 1.0 / 65.0);
        let full = Mask::new(10, 10, vec![true; 100]).unwrap();
        assert_eq!(mask_to_points::<f64>(&full).unwrap().len(), 100);
        assert!(mask_to_points::<f64>(&Mask::empty(4, 4)).is_err());
    }

    #[test]
    fn mask_points_stay_inside_projected_bounds() {
        let t = sphere();
        let tex = TextureMap::uniform(4, 4, [0.2; 3]);
        let p = pose();
        let out = rasterize(&t.base_vertices, &t.faces, &t.uv, &tex, &p, 48, [0.0; 3]).unwrap();
        let proj = crate::camera::project_weak_perspective(&p, &t.base_vertices).unwrap();
        let px = 2.0 / 48.0;
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for q in &proj.points {
            for k in 0..2 {
                lo[k] = lo[k].min(q[k]);
                hi[k] = hi[k].max(q[k]);
            }
        }
        for q in mask_to_points::<f64>(&out.mask).unwrap() {
            for k in 0..2 {
                assert!(q[k] >= lo[k] - px && q[k] <= hi[k] + px);
            }
        }
    }
}
