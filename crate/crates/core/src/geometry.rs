//! Sphere template, UV-space deformation maps, and mesh-level measures.
//!
//! Grid vertex `(i, j)` of an `H x W` template sits at polar angle
//! `theta = pi * i / (H - 1)` and azimuth `phi = 2 pi * j / (W - 1)`, at
//! `(sin theta sin phi, cos theta, sin theta cos phi)`: +Y is up and the
//! mirror `j -> W - 1 - j` is the reflection `x -> -x`. Column `W - 1`
//! duplicates column 0 (the seam) and rows `0` / `H - 1` collapse onto the
//! poles, so UV lookups never wrap.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensorcore::{cross, dot3, norm3, sub3, BucketGrid, Real, Rng};

pub type Vec3<F> = [F; 3];

/// Faces with area below this are left out of normal-based measures.
pub const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct MeshTopology<F> {
    pub grid_h: usize,
    pub grid_w: usize,
    pub faces: Vec<[u32; 3]>,
    pub uv: Vec<[F; 2]>,
    pub base_vertices: Vec<Vec3<F>>,
}

impl<F: Real> MeshTopology<F> {
    pub fn vertex_count(&self) -> usize {
        self.grid_h * self.grid_w
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.grid_w + j
    }
}

pub fn build_sphere_template<F: Real>(grid_h: usize, grid_w: usize) -> Result<MeshTopology<F>> {
    if grid_h < 3 || grid_w < 3 {
        return Err(Error::invalid(format!(
            "sphere template needs at least 3x3 vertices, got {grid_h}x{grid_w}"
        )));
    }
    let pi = F::PI();
    let mut base = Vec::with_capacity(grid_h * grid_w);
    let mut uv = Vec::with_capacity(grid_h * grid_w);
    for i in 0..grid_h {
        let v = F::lit(i as f64) / F::lit((grid_h - 1) as f64);
        let theta = pi * v;
        for j in 0..grid_w {
            let u = F::lit(j as f64) / F::lit((grid_w - 1) as f64);
            let phi = (pi + pi) * u;
            let (st, ct) = theta.sin_cos();
            let (sp, cp) = phi.sin_cos();
            base.push([st * sp, ct, st * cp]);
            uv.push([u, v]);
        }
    }
    // Snap the analytically exact poles and seam so duplicates coincide bitwise.
    for j in 0..grid_w {
        base[j] = [F::zero(), F::one(), F::zero()];
        base[(grid_h - 1) * grid_w + j] = [F::zero(), -F::one(), F::zero()];
    }
    for i in 0..grid_h {
        base[i * grid_w + grid_w - 1] = base[i * grid_w];
    }

    let mut faces = Vec::with_capacity(2 * (grid_h - 1) * (grid_w - 1));
    for i in 0..grid_h - 1 {
        for j in 0..grid_w - 1 {
            let a = (i * grid_w + j) as u32;
            let b = ((i + 1) * grid_w + j) as u32;
            let c = ((i + 1) * grid_w + j + 1) as u32;
            let d = (i * grid_w + j + 1) as u32;
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    Ok(MeshTopology {
        grid_h,
        grid_w,
        faces,
        uv,
        base_vertices: base,
    })
}

/// Number of stored columns in a half-width map covering `u in [0, 0.5]`.
pub fn half_width(grid_w: usize) -> usize {
    (grid_w + 1) / 2
}

/// `H x W` grid of per-vertex 3D offsets, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationMap<F> {
    pub h: usize,
    pub w: usize,
    pub offsets: Vec<Vec3<F>>,
}

/// Left half (`half_width(w)` columns) of a deformation map of full width `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfDeformation<F> {
    pub h: usize,
    pub w: usize,
    pub offsets: Vec<Vec3<F>>,
}

impl<F: Real> DeformationMap<F> {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            offsets: vec![[F::zero(); 3]; h * w],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> Vec3<F> {
        self.offsets[i * self.w + j]
    }

    /// The source half that [`symmetrize`] consumes.
    pub fn half(&self) -> HalfDeformation<F> {
        let hw = half_width(self.w);
        let mut offsets = Vec::with_capacity(self.h * hw);
        for i in 0..self.h {
            offsets.extend_from_slice(&self.offsets[i * self.w..i * self.w + hw]);
        }
        HalfDeformation {
            h: self.h,
            w: self.w,
            offsets,
        }
    }
}

impl<F: Real> HalfDeformation<F> {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            offsets: vec![[F::zero(); 3]; h * half_width(w)],
        }
    }
}

/// For a full column `j`: source half column, x sign, and whether x is pinned to 0.
fn mirror_source(w: usize, j: usize) -> (usize, bool, bool) {
    let hw = half_width(w);
    let (src, flip) = if j < hw { (j, false) } else { (w - 1 - j, true) };
    // Seam columns and the u = 0.5 column (odd widths) lie on the mirror plane.
    let on_plane = src == 0 || (w % 2 == 1 && src == w / 2);
    (src, flip, on_plane)
}

/// Mirrors a half map into a full map symmetric under `x -> -x`.
pub fn symmetrize<F: Real>(half: &HalfDeformation<F>) -> Result<DeformationMap<F>> {
    let hw = half_width(half.w);
    if half.offsets.len() != half.h * hw {
        return Err(Error::shape(format!(
            "half map of {}x{} needs {} offsets, got {}",
            half.h,
            half.w,
            half.h * hw,
            half.offsets.len()
        )));
    }
    let mut full = DeformationMap::zeros(half.h, half.w);
    for i in 0..half.h {
        for j in 0..half.w {
            let (src, flip, on_plane) = mirror_source(half.w, j);
            let s = half.offsets[i * hw + src];
            let x = if on_plane {
                F::zero()
            } else if flip {
                -s[0]
            } else {
                s[0]
            };
            full.offsets[i * half.w + j] = [x, s[1], s[2]];
        }
    }
    Ok(full)
}

/// Adjoint of [`symmetrize`]: pulls a gradient on the full map back to the half map.
pub fn symmetrize_backward<F: Real>(grad: &DeformationMap<F>) -> HalfDeformation<F> {
    let hw = half_width(grad.w);
    let mut out = HalfDeformation::zeros(grad.h, grad.w);
    for i in 0..grad.h {
        for j in 0..grad.w {
            let (src, flip, on_plane) = mirror_source(grad.w, j);
            let g = grad.offsets[i * grad.w + j];
            let o = &mut out.offsets[i * hw + src];
            if !on_plane {
                o[0] += if flip { -g[0] } else { g[0] };
            }
            o[1] += g[1];
            o[2] += g[2];
        }
    }
    out
}

/// Replaces the first and last rows by their mean so each pole is a single point.
pub fn weld_poles<F: Real>(map: &mut DeformationMap<F>) {
    let w = map.w;
    let inv = F::one() / F::lit(w as f64);
    for row in [0, map.h - 1] {
        let mut mean = [F::zero(); 3];
        for j in 0..w {
            let o = map.offsets[row * w + j];
            for k in 0..3 {
                mean[k] += o[k];
            }
        }
        let mean = [mean[0] * inv, mean[1] * inv, mean[2] * inv];
        for j in 0..w {
            map.offsets[row * w + j] = mean;
        }
    }
}

/// Adjoint of [`weld_poles`] (the weld is a symmetric linear map).
pub fn weld_poles_backward<F: Real>(grad: &mut DeformationMap<F>) {
    weld_poles(grad)
}

/// `V = V_sphere + offsets`.
pub fn apply_deformation<F: Real>(
    map: &DeformationMap<F>,
    topo: &MeshTopology<F>,
) -> Result<Vec<Vec3<F>>> {
    if map.h != topo.grid_h || map.w != topo.grid_w || map.offsets.len() != map.h * map.w {
        return Err(Error::shape(format!(
            "deformation {}x{} does not match template {}x{}",
            map.h, map.w, topo.grid_h, topo.grid_w
        )));
    }
    Ok(topo
        .base_vertices
        .iter()
        .zip(&map.offsets)
        .map(|(b, o)| [b[0] + o[0], b[1] + o[1], b[2] + o[2]])
        .collect())
}

/// Pairs of faces sharing an edge, in ascending order.
pub fn face_adjacency(faces: &[[u32; 3]]) -> Result<Vec<(u32, u32)>> {
    let mut edges: HashMap<(u32, u32), Vec<u32>> = HashMap::new();
    for (f, tri) in faces.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            if a == b {
                continue;
            }
            edges.entry((a.min(b), a.max(b))).or_default().push(f as u32);
        }
    }
    let mut pairs = Vec::new();
    for (edge, fs) in edges {
        match fs.len() {
            1 => {}
            2 => pairs.push((fs[0].min(fs[1]), fs[0].max(fs[1]))),
            n => {
                return Err(Error::Degenerate(format!(
                    "edge {edge:?} shared by {n} faces"
                )))
            }
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    Ok(pairs)
}

/// Mean `1 - cos` between normals of edge-adjacent faces.
#[derive(Debug, Clone)]
pub struct Smoothness {
    faces: Vec<[u32; 3]>,
    pairs: Vec<(u32, u32)>,
}

impl Smoothness {
    pub fn new(faces: &[[u32; 3]]) -> Result<Self> {
        let pairs = face_adjacency(faces)?;
        if pairs.is_empty() {
            return Err(Error::Degenerate("mesh has no interior edge".into()));
        }
        Ok(Self {
            faces: faces.to_vec(),
            pairs,
        })
    }

    pub fn value<F: Real>(&self, v: &[Vec3<F>]) -> Result<F> {
        self.eval(v, None)
    }

    pub fn value_and_grad<F: Real>(&self, v: &[Vec3<F>]) -> Result<(F, Vec<Vec3<F>>)> {
        let mut grad = vec![[F::zero(); 3]; v.len()];
        let val = self.eval(v, Some(&mut grad))?;
        Ok((val, grad))
    }

    fn eval<F: Real>(&self, v: &[Vec3<F>], grad: Option<&mut Vec<Vec3<F>>>) -> Result<F> {
        let min_norm = F::lit(2.0 * DEGENERATE_AREA);
        let normals: Vec<Vec3<F>> = self
            .faces
            .iter()
            .map(|f| {
                let a = v[f[0] as usize];
                cross(sub3(v[f[1] as usize], a), sub3(v[f[2] as usize], a))
            })
            .collect();
        let lens: Vec<F> = normals.iter().map(|&n| norm3(n)).collect();

        let live: Vec<(usize, usize)> = self
            .pairs
            .iter()
            .map(|&(a, b)| (a as usize, b as usize))
            .filter(|&(a, b)| lens[a] >= min_norm && lens[b] >= min_norm)
            .collect();
        if live.is_empty() {
            return Err(Error::Degenerate(
                "every adjacent face pair has a degenerate face".into(),
            ));
        }
        let inv_n = F::one() / F::lit(live.len() as f64);
        let unit = |i: usize| {
            let n = normals[i];
            let l = lens[i];
            [n[0] / l, n[1] / l, n[2] / l]
        };

        let mut total = F::zero();
        let mut dn = grad.as_ref().map(|_| vec![[F::zero(); 3]; normals.len()]);
        for &(a, b) in &live {
            let (ua, ub) = (unit(a), unit(b));
            let c = dot3(ua, ub);
            total += F::one() - c;
            if let Some(dn) = dn.as_mut() {
                // d(-cos)/dn_a = -(u_b - cos u_a) / |n_a|
                for k in 0..3 {
                    dn[a][k] -= (ub[k] - c * ua[k]) / lens[a] * inv_n;
                    dn[b][k] -= (ua[k] - c * ub[k]) / lens[b] * inv_n;
                }
            }
        }
        if let (Some(grad), Some(dn)) = (grad, dn) {
            for (f, g) in self.faces.iter().zip(&dn) {
                let (ia, ib, ic) = (f[0] as usize, f[1] as usize, f[2] as usize);
                let e1 = sub3(v[ib], v[ia]);
                let e2 = sub3(v[ic], v[ia]);
                let gb = cross(e2, *g);
                let gc = cross(*g, e1);
                for k in 0..3 {
                    grad[ib][k] += gb[k];
                    grad[ic][k] += gc[k];
                    grad[ia][k] -= gb[k] + gc[k];
                }
            }
        }
        Ok(total * inv_n)
    }
}

pub fn smoothness_loss<F: Real>(v: &[Vec3<F>], faces: &[[u32; 3]]) -> Result<F> {
    Smoothness::new(faces)?.value(v)
}

/// Face choices and barycentric weights of a surface sample, reusable on any
/// mesh with the same connectivity.
#[derive(Debug, Clone)]
pub struct SurfaceSamples<F> {
    pub faces: Vec<u32>,
    pub bary: Vec<[F; 3]>,
}

impl<F: Real> SurfaceSamples<F> {
    /// Area-weighted face choice with uniform barycentric placement.
    pub fn draw(v: &[Vec3<F>], faces: &[[u32; 3]], n: usize, rng: &mut Rng) -> Result<Self> {
        let mut cdf = Vec::with_capacity(faces.len());
        let mut total = 0.0f64;
        for f in faces {
            let a = v[f[0] as usize];
            let area = norm3(cross(sub3(v[f[1] as usize], a), sub3(v[f[2] as usize], a)))
                .to_f64_lossy()
                * 0.5;
            total += area;
            cdf.push(total);
        }
        if n > 0 && !(total > 0.0) {
            return Err(Error::Degenerate("mesh has zero surface area".into()));
        }
        let mut out = Self {
            faces: Vec::with_capacity(n),
            bary: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let r = rng.uniform() * total;
            let f = cdf.partition_point(|&c| c <= r).min(faces.len() - 1);
            let s = rng.uniform().sqrt();
            let t = rng.uniform();
            out.faces.push(f as u32);
            out.bary
                .push([F::lit(1.0 - s), F::lit(s * (1.0 - t)), F::lit(s * t)]);
        }
        Ok(out)
    }

    pub fn points(&self, v: &[Vec3<F>], faces: &[[u32; 3]]) -> Vec<Vec3<F>> {
        self.faces
            .iter()
            .zip(&self.bary)
            .map(|(&f, w)| {
                let tri = faces[f as usize];
                let mut p = [F::zero(); 3];
                for (k, &vi) in tri.iter().enumerate() {
                    for c in 0..3 {
                        p[c] += w[k] * v[vi as usize][c];
                    }
                }
                p
            })
            .collect()
    }
}

pub fn sample_surface<F: Real>(
    v: &[Vec3<F>],
    faces: &[[u32; 3]],
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec3<F>>> {
    Ok(SurfaceSamples::draw(v, faces, n, rng)?.points(v, faces))
}

/// One-sided mean nearest-neighbour distance from `from` into the grid.
pub(crate) fn mean_nn_distance<F: Real, const D: usize>(
    from: &[[F; D]],
    into: &BucketGrid<F, D>,
) -> F {
    let mut acc = F::zero();
    for p in from {
        acc += into.nearest(p).map(|(_, d)| d).unwrap_or(F::zero());
    }
    acc / F::lit(from.len() as f64)
}

/// Symmetric Chamfer distance with unsquared Euclidean nearest-neighbour
/// distances: `0.5 * (mean_p min_q |p-q| + mean_q min_p |p-q|)`.
pub fn chamfer3d<F: Real>(p: &[Vec3<F>], q: &[Vec3<F>]) -> Result<F> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::empty("chamfer3d operand"));
    }
    let gp = BucketGrid::new(p);
    let gq = BucketGrid::new(q);
    Ok(F::lit(0.5) * (mean_nn_distance(p, &gq) + mean_nn_distance(q, &gp)))
}
