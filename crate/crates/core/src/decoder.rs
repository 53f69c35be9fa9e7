//! Fixed random generator `z -> (deformation map, texture map)`.
//!
//! ```text
//! h        = tanh(W1 z + b1)
//! half     = 0.3 * tanh(W_def h + b_def)          (H x ceil(W/2) x 3)
//! deform   = weld_poles(symmetrize(half))
//! coeff    = W_tex h + b_tex                       (3 x K)
//! texture  = sigmoid(g / sqrt(K) * sum_k coeff[c, k] * basis_k(u, v))
//! ```
//!
//! `basis_k(u, v) = sin(2 pi fu_k u + pi fv_k v + phase_k)` with the
//! `(fu, fv, phase)` triples stored in `fourier_freqs`. Columns of `W_def`
//! are mixtures of a few smooth random fields over the template sphere,
//! applied along the template normal, so nearby vertices move together and
//! decoded shapes stay blob-like. All weights are rounded to `f32` at
//! creation so that a save/load cycle is lossless.

use crate::error::{Error, Result};
use crate::geometry::{
    build_sphere_template, half_width, symmetrize, symmetrize_backward, weld_poles, weld_poles_backward,
    DeformationMap, HalfDeformation,
};
use crate::render::TextureMap;
use crate::tensorcore::{Real, Rng, Tensor};

pub const DEFORM_BOUND: f64 = 0.3;
const TEX_GAIN: f64 = 3.0;
const DEF_GAIN: f64 = 1.5;
/// Extra factor on the `1/sqrt(fan_in)` scale of `W1`.
const Z_GAIN: f64 = 0.4;
/// Number of smooth shape modes mixed by `W_def`.
const SHAPE_MODES: usize = 2;
const FIELD_TERMS: usize = 4;
const FIELD_FREQ: f64 = 1.5;
/// Texture basis frequencies are drawn from `0..MAX_FREQ`.
const MAX_FREQ: usize = 3;

pub const TENSOR_NAMES: [&str; 7] = ["w1", "b1", "w_def", "b_def", "w_tex", "b_tex", "fourier_freqs"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderDims {
    pub z_dim: usize,
    pub hidden: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub tex_h: usize,
    pub tex_w: usize,
    pub n_basis: usize,
}

impl Default for DecoderDims {
    fn default() -> Self {
        Self {
            z_dim: 64,
            hidden: 256,
            grid_h: 32,
            grid_w: 32,
            tex_h: 64,
            tex_w: 64,
            n_basis: 32,
        }
    }
}

impl DecoderDims {
    pub fn validate(&self) -> Result<()> {
        if self.z_dim == 0 || self.hidden == 0 || self.n_basis == 0 {
            return Err(Error::invalid("decoder widths must be positive"));
        }
        if self.grid_h < 3 || self.grid_w < 3 {
            return Err(Error::invalid("deformation grid must be at least 3x3"));
        }
        if self.tex_h == 0 || self.tex_w == 0 {
            return Err(Error::invalid("texture must be non-empty"));
        }
        Ok(())
    }

    /// Length of the half-grid logit vector.
    pub fn def_out(&self) -> usize {
        self.grid_h * half_width(self.grid_w) * 3
    }

    pub fn tex_out(&self) -> usize {
        3 * self.n_basis
    }

    fn shapes(&self) -> [Vec<usize>; 7] {
        [
            vec![self.hidden, self.z_dim],
            vec![self.hidden],
            vec![self.def_out(), self.hidden],
            vec![self.def_out()],
            vec![self.tex_out(), self.hidden],
            vec![self.tex_out()],
            vec![self.n_basis, 3],
        ]
    }
}

#[derive(Debug, Clone)]
pub struct DecoderWeights<F> {
    dims: DecoderDims,
    w1: Vec<F>,
    b1: Vec<F>,
    w_def: Vec<F>,
    b_def: Vec<F>,
    w_tex: Vec<F>,
    b_tex: Vec<F>,
    fourier_freqs: Vec<F>,
    /// `texels x K`, evaluated at texel centers.
    basis: Vec<F>,
}

/// Intermediate values needed by [`decode_backward`].
#[derive(Debug, Clone)]
pub struct DecodeCache<F> {
    hidden: Vec<F>,
    /// `tanh` of the deformation logits.
    def_tanh: Vec<F>,
}

#[derive(Debug, Clone)]
pub struct Decoded<F> {
    pub deformation: DeformationMap<F>,
    pub texture: TextureMap<F>,
    pub cache: DecodeCache<F>,
}

fn matvec<F: Real>(w: &[F], b: &[F], x: &[F]) -> Vec<F> {
    let n = x.len();
    b.iter()
        .enumerate()
        .map(|(r, &bias)| {
            let row = &w[r * n..(r + 1) * n];
            bias + row.iter().zip(x).map(|(a, b)| *a * *b).sum::<F>()
        })
        .collect()
}

/// `out += W^T g` for a row-major `len(g) x len(out)` matrix.
fn matvec_t_acc<F: Real>(w: &[F], g: &[F], out: &mut [F]) {
    let n = out.len();
    for (r, &gr) in g.iter().enumerate() {
        if gr == F::zero() {
            continue;
        }
        for (o, a) in out.iter_mut().zip(&w[r * n..(r + 1) * n]) {
            *o += *a * gr;
        }
    }
}

fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

fn basis_matrix<F: Real>(dims: &DecoderDims, freqs: &[F]) -> Vec<F> {
    let k = dims.n_basis;
    let two_pi = F::lit(2.0 * std::f64::consts::PI);
    let pi = F::PI();
    let mut basis = Vec::with_capacity(dims.tex_h * dims.tex_w * k);
    for r in 0..dims.tex_h {
        let v = (F::lit(r as f64) + F::lit(0.5)) / F::lit(dims.tex_h as f64);
        for c in 0..dims.tex_w {
            let u = (F::lit(c as f64) + F::lit(0.5)) / F::lit(dims.tex_w as f64);
            for f in freqs.chunks(3) {
                basis.push((two_pi * f[0] * u + pi * f[1] * v + f[2]).sin());
            }
        }
    }
    basis
}

/// Smooth random field `sum_m sin(omega_m . p + phase_m)` over `points`,
/// normalized to unit RMS.
fn smooth_field(points: &[[f64; 3]], rng: &mut Rng) -> Vec<f64> {
    let terms: Vec<([f64; 3], f64)> = (0..FIELD_TERMS)
        .map(|_| {
            let w = [rng.normal(), rng.normal(), rng.normal()].map(|x| FIELD_FREQ * x);
            (w, 2.0 * std::f64::consts::PI * rng.uniform())
        })
        .collect();
    let mut f: Vec<f64> = points
        .iter()
        .map(|p| {
            terms
                .iter()
                .map(|(w, ph)| (w[0] * p[0] + w[1] * p[1] + w[2] * p[2] + ph).sin())
                .sum()
        })
        .collect();
    let rms = (f.iter().map(|x| x * x).sum::<f64>() / f.len() as f64).sqrt();
    if rms > 1e-12 {
        f.iter_mut().for_each(|x| *x /= rms);
    }
    f
}

fn to_real<F: Real>(v: &[f64]) -> Vec<F> {
    v.iter().map(|x| F::lit(*x as f32 as f64)).collect()
}

/// Deterministic weights for `seed`; every value is exactly representable in `f32`.
pub fn init_decoder<F: Real>(seed: u64, dims: &DecoderDims) -> Result<DecoderWeights<F>> {
    dims.validate()?;
    let mut rng = Rng::new(seed);
    let scaled = |rng: &mut Rng, n: usize, fan_in: usize| -> Vec<f64> {
        let s = 1.0 / (fan_in as f64).sqrt();
        (0..n).map(|_| rng.normal() * s).collect()
    };
    let w1: Vec<f64> = scaled(&mut rng, dims.hidden * dims.z_dim, dims.z_dim)
        .into_iter()
        .map(|x| x * Z_GAIN)
        .collect();
    let b1: Vec<f64> = (0..dims.hidden).map(|_| 0.1 * rng.normal()).collect();

    // Half-grid template positions, in the order of the logit vector.
    let topo = build_sphere_template::<f64>(dims.grid_h, dims.grid_w)?;
    let hw = half_width(dims.grid_w);
    let mut half_pos = Vec::with_capacity(dims.grid_h * hw);
    for i in 0..dims.grid_h {
        for j in 0..hw {
            half_pos.push(topo.base_vertices[topo.index(i, j)]);
        }
    }
    let n_def = dims.def_out();
    // W_def = modes * mix, so every hidden unit moves the surface along a
    // few shared smooth directions.
    let mut modes = vec![0.0; n_def * SHAPE_MODES];
    for m in 0..SHAPE_MODES {
        // Offsets along the template normal; on the unit sphere that is the
        // position itself, so x offsets also vanish on the mirror plane.
        let field = smooth_field(&half_pos, &mut rng);
        for (vtx, f) in field.iter().enumerate() {
            for ch in 0..3 {
                modes[(vtx * 3 + ch) * SHAPE_MODES + m] = f * half_pos[vtx][ch];
            }
        }
    }
    let mix = scaled(&mut rng, SHAPE_MODES * dims.hidden, SHAPE_MODES * dims.hidden);
    let mut w_def = vec![0.0; n_def * dims.hidden];
    for (row, out) in w_def.chunks_mut(dims.hidden).enumerate() {
        let mode_row = &modes[row * SHAPE_MODES..(row + 1) * SHAPE_MODES];
        for (unit, o) in out.iter_mut().enumerate() {
            let acc: f64 = (0..SHAPE_MODES).map(|m| mode_row[m] * mix[m * dims.hidden + unit]).sum();
            *o = DEF_GAIN * acc;
        }
    }
    let b_def = vec![0.0; n_def];

    let w_tex = scaled(&mut rng, dims.tex_out() * dims.hidden, dims.hidden);
    let b_tex: Vec<f64> = (0..dims.tex_out()).map(|_| 0.1 * rng.normal()).collect();
    let mut freqs = Vec::with_capacity(dims.n_basis * 3);
    for _ in 0..dims.n_basis {
        freqs.push(rng.below(MAX_FREQ) as f64);
        freqs.push(rng.below(MAX_FREQ) as f64);
        freqs.push(2.0 * std::f64::consts::PI * rng.uniform());
    }
    let fourier_freqs: Vec<F> = to_real(&freqs);
    Ok(DecoderWeights {
        dims: *dims,
        w1: to_real(&w1),
        b1: to_real(&b1),
        w_def: to_real(&w_def),
        b_def: to_real(&b_def),
        w_tex: to_real(&w_tex),
        b_tex: to_real(&b_tex),
        basis: basis_matrix(dims, &fourier_freqs),
        fourier_freqs,
    })
}

impl<F: Real> DecoderWeights<F> {
    pub fn dims(&self) -> &DecoderDims {
        &self.dims
    }

    fn parts(&self) -> [&Vec<F>; 7] {
        [
            &self.w1,
            &self.b1,
            &self.w_def,
            &self.b_def,
            &self.w_tex,
            &self.b_tex,
            &self.fourier_freqs,
        ]
    }

    /// Named tensors in the documented order.
    pub fn to_tensors(&self) -> Vec<(String, Tensor<F>)> {
        TENSOR_NAMES
            .iter()
            .zip(self.dims.shapes())
            .zip(self.parts())
            .map(|((name, shape), data)| {
                (
                    name.to_string(),
                    Tensor::new(shape, data.clone()).expect("weights are finite and well-shaped"),
                )
            })
            .collect()
    }

    /// Rebuilds weights from named tensors, checking every shape against `dims`.
    pub fn from_tensors(tensors: Vec<(String, Tensor<F>)>, dims: &DecoderDims) -> Result<Self> {
        dims.validate()?;
        let mut slots: [Option<Vec<F>>; 7] = Default::default();
        let shapes = dims.shapes();
        for (name, t) in tensors {
            let k = TENSOR_NAMES
                .iter()
                .position(|n| *n == name)
                .ok_or_else(|| Error::invalid(format!("unexpected decoder tensor '{name}'")))?;
            if t.shape() != shapes[k].as_slice() {
                return Err(Error::shape(format!(
                    "tensor '{name}' has shape {:?}, expected {:?}",
                    t.shape(),
                    shapes[k]
                )));
            }
            slots[k] = Some(t.into_data());
        }
        let mut take = |k: usize| {
            slots[k]
                .take()
                .ok_or_else(|| Error::invalid(format!("missing decoder tensor '{}'", TENSOR_NAMES[k])))
        };
        let (w1, b1, w_def, b_def) = (take(0)?, take(1)?, take(2)?, take(3)?);
        let (w_tex, b_tex, fourier_freqs) = (take(4)?, take(5)?, take(6)?);
        Ok(Self {
            dims: *dims,
            basis: basis_matrix(dims, &fourier_freqs),
            w1,
            b1,
            w_def,
            b_def,
            w_tex,
            b_tex,
            fourier_freqs,
        })
    }

    /// Largest absolute difference across all stored weights.
    pub fn max_abs_diff(&self, other: &Self) -> Option<F> {
        if self.dims != other.dims {
            return None;
        }
        let mut worst = F::zero();
        for (a, b) in self.parts().iter().zip(other.parts()) {
            for (x, y) in a.iter().zip(b.iter()) {
                worst = worst.max((*x - *y).abs());
            }
        }
        Some(worst)
    }
}

pub fn decode<F: Real>(z: &[F], w: &DecoderWeights<F>) -> Result<Decoded<F>> {
    let d = &w.dims;
    if z.len() != d.z_dim {
        return Err(Error::shape(format!("latent has {} entries, decoder expects {}", z.len(), d.z_dim)));
    }
    if z.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("latent code".into()));
    }
    let hidden: Vec<F> = matvec(&w.w1, &w.b1, z).into_iter().map(|a| a.tanh()).collect();

    let def_tanh: Vec<F> = matvec(&w.w_def, &w.b_def, &hidden).into_iter().map(|l| l.tanh()).collect();
    let bound = F::lit(DEFORM_BOUND);
    let half = HalfDeformation {
        h: d.grid_h,
        w: d.grid_w,
        offsets: def_tanh.chunks(3).map(|c| [bound * c[0], bound * c[1], bound * c[2]]).collect(),
    };
    let mut deformation = symmetrize(&half)?;
    weld_poles(&mut deformation);

    let coeff = matvec(&w.w_tex, &w.b_tex, &hidden);
    let k = d.n_basis;
    let g = F::lit(TEX_GAIN) / F::lit(k as f64).sqrt();
    let texels = d.tex_h * d.tex_w;
    let mut data = Vec::with_capacity(texels);
    for t in 0..texels {
        let b = &w.basis[t * k..(t + 1) * k];
        let mut rgb = [F::zero(); 3];
        for (ch, out) in rgb.iter_mut().enumerate() {
            let s: F = coeff[ch * k..(ch + 1) * k].iter().zip(b).map(|(c, b)| *c * *b).sum();
            *out = sigmoid(g * s).max(F::zero()).min(F::one());
        }
        data.push(rgb);
    }
    Ok(Decoded {
        deformation,
        texture: TextureMap {
            h: d.tex_h,
            w: d.tex_w,
            data,
        },
        cache: DecodeCache { hidden, def_tanh },
    })
}

/// Pulls gradients on the decoded maps back to `z`.
///
/// `texture` must be the texture returned alongside `cache`.
pub fn decode_backward<F: Real>(
    w: &DecoderWeights<F>,
    cache: &DecodeCache<F>,
    texture: &TextureMap<F>,
    grad_deformation: Option<&DeformationMap<F>>,
    grad_texture: Option<&[[F; 3]]>,
) -> Result<Vec<F>> {
    let d = &w.dims;
    let mut gh = vec![F::zero(); d.hidden];
    if let Some(gdef) = grad_deformation {
        if gdef.h != d.grid_h || gdef.w != d.grid_w || gdef.offsets.len() != d.grid_h * d.grid_w {
            return Err(Error::shape("deformation gradient does not match decoder grid"));
        }
        let mut full = gdef.clone();
        weld_poles_backward(&mut full);
        let half = symmetrize_backward(&full);
        let bound = F::lit(DEFORM_BOUND);
        let gl: Vec<F> = half
            .offsets
            .iter()
            .flatten()
            .zip(&cache.def_tanh)
            .map(|(g, t)| *g * bound * (F::one() - *t * *t))
            .collect();
        matvec_t_acc(&w.w_def, &gl, &mut gh);
    }
    if let Some(gtex) = grad_texture {
        let texels = d.tex_h * d.tex_w;
        if gtex.len() != texels || texture.data.len() != texels {
            return Err(Error::shape("texture gradient does not match decoder texture"));
        }
        let k = d.n_basis;
        let g = F::lit(TEX_GAIN) / F::lit(k as f64).sqrt();
        let mut gc = vec![F::zero(); 3 * k];
        for t in 0..texels {
            let b = &w.basis[t * k..(t + 1) * k];
            for ch in 0..3 {
                let y = texture.data[t][ch];
                let gs = gtex[t][ch] * y * (F::one() - y) * g;
                if gs == F::zero() {
                    continue;
                }
                for (c, bk) in gc[ch * k..(ch + 1) * k].iter_mut().zip(b) {
                    *c += gs * *bk;
                }
            }
        }
        matvec_t_acc(&w.w_tex, &gc, &mut gh);
    }
    let ga: Vec<F> = gh
        .iter()
        .zip(&cache.hidden)
        .map(|(g, h)| *g * (F::one() - *h * *h))
        .collect();
    let mut gz = vec![F::zero(); d.z_dim];
    matvec_t_acc(&w.w1, &ga, &mut gz);
    Ok(gz)
}
