use crate::camera::{project_weak_perspective, CameraPose};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::render::{pixel_center, Image, Mask, TextureMap};
use crate::tensorcore::Real;

pub const MIN_RESOLUTION: usize = 16;

/// One bilinear tap: pixel color += weight * texel color.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TexelWeight<F> {
    pub pixel: u32,
    pub texel: u32,
    pub weight: F,
}

#[derive(Debug, Clone)]
pub struct RenderOutput<F> {
    pub resolution: usize,
    pub background: [F; 3],
    pub image: Image<F>,
    pub mask: Mask,
    /// Distance along the view direction, `+inf` on background.
    pub depth: Vec<F>,
    /// Sorted by pixel; foreground pixels own 1 to 4 entries.
    pub texel_weights: Vec<TexelWeight<F>>,
    offsets: Vec<u32>,
    texture_dims: (usize, usize),
}

impl<F: Real> RenderOutput<F> {
    pub fn weights_for(&self, pixel: usize) -> &[TexelWeight<F>] {
        &self.texel_weights[self.offsets[pixel] as usize..self.offsets[pixel + 1] as usize]
    }

    /// Re-shades the frozen coverage with another texture of the same size.
    pub fn shade(&self, texture: &TextureMap<F>) -> Result<Image<F>> {
        if (texture.h, texture.w) != self.texture_dims {
            return Err(Error::shape(format!(
                "texture {}x{} does not match the {}x{} used for rasterization",
                texture.h, texture.w, self.texture_dims.0, self.texture_dims.1
            )));
        }
        let mut image = Image::filled(self.resolution, self.resolution, self.background);
        for (p, px) in image.data.iter_mut().enumerate() {
            if self.mask.data[p] {
                *px = [F::zero(); 3];
                for tw in self.weights_for(p) {
                    let t = texture.data[tw.texel as usize];
                    for c in 0..3 {
                        px[c] += tw.weight * t[c];
                    }
                }
            }
        }
        Ok(image)
    }

    /// Pulls a per-pixel RGB gradient back onto the texels.
    pub fn texture_grad(&self, grad_pixels: &[[F; 3]]) -> Vec<[F; 3]> {
        let (h, w) = self.texture_dims;
        let mut out = vec![[F::zero(); 3]; h * w];
        for tw in &self.texel_weights {
            let g = grad_pixels[tw.pixel as usize];
            let o = &mut out[tw.texel as usize];
            for c in 0..3 {
                o[c] += tw.weight * g[c];
            }
        }
        out
    }
}

#[inline]
fn cross2<F: Real>(a: [F; 2], b: [F; 2], p: [F; 2]) -> F {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Bilinear taps for texture coordinate `uv` with clamp-to-edge addressing.
fn bilinear_taps<F: Real>(uv: [F; 2], h: usize, w: usize, out: &mut Vec<(u32, F)>) {
    out.clear();
    let x = uv[0] * F::lit(w as f64) - F::lit(0.5);
    let y = uv[1] * F::lit(h as f64) - F::lit(0.5);
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let clamp = |v: F, n: usize| -> usize {
        let v = v.to_f64_lossy();
        if v <= 0.0 {
            0
        } else {
            (v as usize).min(n - 1)
        }
    };
    let xs = [clamp(x0, w), clamp(x0 + F::one(), w)];
    let ys = [clamp(y0, h), clamp(y0 + F::one(), h)];
    let wx = [F::one() - fx, fx];
    let wy = [F::one() - fy, fy];
    for (a, &yy) in ys.iter().enumerate() {
        for (b, &xx) in xs.iter().enumerate() {
            let wgt = wy[a] * wx[b];
            if wgt == F::zero() {
                continue;
            }
            let texel = (yy * w + xx) as u32;
            match out.iter_mut().find(|(t, _)| *t == texel) {
                Some(e) => e.1 += wgt,
                None => out.push((texel, wgt)),
            }
        }
    }
    if out.is_empty() {
        out.push(((ys[0] * w + xs[0]) as u32, F::one()));
    }
    // The last tap takes the remainder so constant textures shade exactly.
    let n = out.len();
    let head: F = out[..n - 1].iter().fold(F::zero(), |acc, t| acc + t.1);
    out[n - 1].1 = F::one() - head;
}

/// Z-buffered rasterization of a UV-textured mesh under a weak-perspective camera.
///
/// Coverage is decided at pixel centers (barycentrics all non-negative);
/// the front-most triangle wins with ties going to the lower face index.
/// Colors are bilinear texture samples at the interpolated UV.
pub fn rasterize<F: Real>(
    vertices: &[Vec3<F>],
    faces: &[[u32; 3]],
    uv: &[[F; 2]],
    texture: &TextureMap<F>,
    pose: &CameraPose<F>,
    resolution: usize,
    background: [F; 3],
) -> Result<RenderOutput<F>> {
    if resolution < MIN_RESOLUTION {
        return Err(Error::invalid(format!(
            "render resolution must be at least {MIN_RESOLUTION}, got {resolution}"
        )));
    }
    if uv.len() != vertices.len() {
        return Err(Error::shape("uv count differs from vertex count"));
    }
    if let Some(f) = faces
        .iter()
        .find(|f| f.iter().any(|&i| i as usize >= vertices.len()))
    {
        return Err(Error::shape(format!("face {f:?} indexes past the vertex list")));
    }
    texture.validate()?;
    let proj = project_weak_perspective(pose, vertices)?;
    let n = resolution;
    let rf = n as f64;
    let mut depth = vec![F::infinity(); n * n];
    let mut owner = vec![u32::MAX; n * n];
    let mut bary = vec![[F::zero(); 3]; n * n];

    for (fi, f) in faces.iter().enumerate() {
        let a = proj.points[f[0] as usize];
        let b = proj.points[f[1] as usize];
        let c = proj.points[f[2] as usize];
        let area = cross2(a, b, c);
        if area == F::zero() {
            continue;
        }
        let z = [
            -proj.depth[f[0] as usize],
            -proj.depth[f[1] as usize],
            -proj.depth[f[2] as usize],
        ];
        let xmin = a[0].min(b[0]).min(c[0]).to_f64_lossy();
        let xmax = a[0].max(b[0]).max(c[0]).to_f64_lossy();
        let ymin = a[1].min(b[1]).min(c[1]).to_f64_lossy();
        let ymax = a[1].max(b[1]).max(c[1]).to_f64_lossy();
        let c0 = (((xmin + 1.0) * rf - 1.0) / 2.0).ceil().max(0.0);
        let c1 = (((xmax + 1.0) * rf - 1.0) / 2.0).floor().min(rf - 1.0);
        let r0 = (((1.0 - ymax) * rf - 1.0) / 2.0).ceil().max(0.0);
        let r1 = (((1.0 - ymin) * rf - 1.0) / 2.0).floor().min(rf - 1.0);
        if c0 > c1 || r0 > r1 {
            continue;
        }
        for row in r0 as usize..=r1 as usize {
            for col in c0 as usize..=c1 as usize {
                let p = pixel_center::<F>(row, col, n, n);
                let la = cross2(b, c, p) / area;
                let lb = cross2(c, a, p) / area;
                let lc = cross2(a, b, p) / area;
                if la < F::zero() || lb < F::zero() || lc < F::zero() {
                    continue;
                }
                let d = la * z[0] + lb * z[1] + lc * z[2];
                let idx = row * n + col;
                if d < depth[idx] {
                    depth[idx] = d;
                    owner[idx] = fi as u32;
                    bary[idx] = [la, lb, lc];
                }
            }
        }
    }

    let mut image = Image::filled(n, n, background);
    let mut mask = Mask::empty(n, n);
    let mut texel_weights = Vec::new();
    let mut offsets = Vec::with_capacity(n * n + 1);
    let mut taps = Vec::with_capacity(4);
    offsets.push(0u32);
    for idx in 0..n * n {
        if owner[idx] != u32::MAX {
            let f = faces[owner[idx] as usize];
            let l = bary[idx];
            let mut t = [F::zero(); 2];
            for k in 0..3 {
                let q = uv[f[k] as usize];
                t[0] += l[k] * q[0];
                t[1] += l[k] * q[1];
            }
            bilinear_taps(t, texture.h, texture.w, &mut taps);
            let mut color = [F::zero(); 3];
            for &(texel, w) in &taps {
                let tc = texture.data[texel as usize];
                for ch in 0..3 {
                    color[ch] += w * tc[ch];
                }
                texel_weights.push(TexelWeight {
                    pixel: idx as u32,
                    texel,
                    weight: w,
                });
            }
            image.data[idx] = color;
            mask.data[idx] = true;
        }
        offsets.push(texel_weights.len() as u32);
    }
    Ok(RenderOutput {
        resolution: n,
        background,
        image,
        mask,
        depth,
        texel_weights,
        offsets,
        texture_dims: (texture.h, texture.w),
    })
}
