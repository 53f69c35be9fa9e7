//! Fixed linear filter bank standing in for a learned feature extractor.
//!
//! The image is premultiplied by its mask, then eight channels are formed:
//! Sobel x and y of the luma, a 5x5 binomial blur of RGB, and raw RGB, all with clamp-to-edge borders. Each
//! channel is averaged over 4x4 cells; a cell is kept when at least half of
//! its pixels are foreground. Every step is linear in the pixel values, so
//! the backward pass is the exact adjoint.

use crate::error::{Error, Result};
use crate::render::{pixel_center, ColoredPointSet, Image, Mask};
use crate::tensorcore::Real;

pub const FEATURE_STRIDE: usize = 4;
pub const FEATURE_DIM: usize = 8;

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];
const BINOMIAL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

#[derive(Debug, Clone)]
pub struct FeaturePoints<F> {
    pub set: ColoredPointSet<F>,
    /// Flat cell index (`row * cells_w + col`) of each point.
    pub cells: Vec<usize>,
    pub width: usize,
    pub height: usize,
}

type Taps = Vec<(isize, isize, f64)>;

fn sobel_taps(axis: usize) -> Taps {
    let mut taps = Vec::new();
    for dr in -1..=1isize {
        for dc in -1..=1isize {
            // x responds to columns, y to rows.
            let k = match axis {
                0 => dc * (2 - dr.abs()),
                _ => dr * (2 - dc.abs()),
            };
            if k != 0 {
                taps.push((dr, dc, k as f64));
            }
        }
    }
    taps
}

fn blur_taps() -> Taps {
    let mut taps = Vec::new();
    for (i, a) in BINOMIAL.iter().enumerate() {
        for (j, b) in BINOMIAL.iter().enumerate() {
            taps.push((i as isize - 2, j as isize - 2, a * b));
        }
    }
    taps
}

#[inline]
fn clamp_index(v: isize, n: usize) -> usize {
    v.clamp(0, n as isize - 1) as usize
}

/// Correlation with clamp-to-edge addressing.
fn filter<F: Real>(plane: &[F], w: usize, h: usize, taps: &Taps) -> Vec<F> {
    let mut out = vec![F::zero(); w * h];
    for r in 0..h {
        for c in 0..w {
            let mut acc = F::zero();
            for &(dr, dc, k) in taps {
                let rr = clamp_index(r as isize + dr, h);
                let cc = clamp_index(c as isize + dc, w);
                acc += F::lit(k) * plane[rr * w + cc];
            }
            out[r * w + c] = acc;
        }
    }
    out
}

/// Adjoint of [`filter`]: scatters each output gradient back to its taps.
fn filter_adjoint<F: Real>(grad: &[F], w: usize, h: usize, taps: &Taps) -> Vec<F> {
    let mut out = vec![F::zero(); w * h];
    for r in 0..h {
        for c in 0..w {
            let g = grad[r * w + c];
            if g == F::zero() {
                continue;
            }
            for &(dr, dc, k) in taps {
                let rr = clamp_index(r as isize + dr, h);
                let cc = clamp_index(c as isize + dc, w);
                out[rr * w + cc] += F::lit(k) * g;
            }
        }
    }
    out
}

fn cell_grid(width: usize, height: usize) -> (usize, usize) {
    (width / FEATURE_STRIDE, height / FEATURE_STRIDE)
}

/// Cells with at least half of their pixels in the foreground.
fn foreground_cells(mask: &Mask) -> Vec<usize> {
    let (cw, ch) = cell_grid(mask.width, mask.height);
    let need = FEATURE_STRIDE * FEATURE_STRIDE / 2;
    let mut cells = Vec::new();
    for cr in 0..ch {
        for cc in 0..cw {
            let mut n = 0;
            for dr in 0..FEATURE_STRIDE {
                for dc in 0..FEATURE_STRIDE {
                    n += mask.get(cr * FEATURE_STRIDE + dr, cc * FEATURE_STRIDE + dc) as usize;
                }
            }
            if n >= need {
                cells.push(cr * cw + cc);
            }
        }
    }
    cells
}

pub fn extract_features<F: Real>(image: &Image<F>, mask: &Mask) -> Result<FeaturePoints<F>> {
    let (w, h) = (image.width, image.height);
    if (mask.width, mask.height) != (w, h) {
        return Err(Error::shape("image and mask sizes differ"));
    }
    let cells = foreground_cells(mask);
    if cells.is_empty() {
        return Err(Error::empty("mask has no foreground feature cell"));
    }
    let mut rgb = [vec![F::zero(); w * h], vec![F::zero(); w * h], vec![F::zero(); w * h]];
    let mut luma = vec![F::zero(); w * h];
    for p in 0..w * h {
        if mask.data[p] {
            for c in 0..3 {
                rgb[c][p] = image.data[p][c];
                luma[p] += F::lit(LUMA[c]) * image.data[p][c];
            }
        }
    }
    let bt = blur_taps();
    let channels = [
        filter(&luma, w, h, &sobel_taps(0)),
        filter(&luma, w, h, &sobel_taps(1)),
        filter(&rgb[0], w, h, &bt),
        filter(&rgb[1], w, h, &bt),
        filter(&rgb[2], w, h, &bt),
        rgb[0].clone(),
        rgb[1].clone(),
        rgb[2].clone(),
    ];
    let (cw, _) = cell_grid(w, h);
    let inv = F::one() / F::lit((FEATURE_STRIDE * FEATURE_STRIDE) as f64);
    let mut positions = Vec::with_capacity(cells.len());
    let mut attrs = Vec::with_capacity(cells.len() * FEATURE_DIM);
    for &cell in &cells {
        let (cr, cc) = (cell / cw, cell % cw);
        let r0 = cr * FEATURE_STRIDE;
        let c0 = cc * FEATURE_STRIDE;
        for ch in &channels {
            let mut acc = F::zero();
            for dr in 0..FEATURE_STRIDE {
                for dc in 0..FEATURE_STRIDE {
                    acc += ch[(r0 + dr) * w + c0 + dc];
                }
            }
            attrs.push(acc * inv);
        }
        // Center of the cell: midway between its two middle pixel centers.
        let a: [F; 2] = pixel_center(r0 + 1, c0 + 1, w, h);
        let b: [F; 2] = pixel_center(r0 + 2, c0 + 2, w, h);
        positions.push([(a[0] + b[0]) * F::lit(0.5), (a[1] + b[1]) * F::lit(0.5)]);
    }
    Ok(FeaturePoints {
        set: ColoredPointSet {
            positions,
            attrs,
            dim: FEATURE_DIM,
        },
        cells,
        width: w,
        height: h,
    })
}

/// Adjoint of [`extract_features`]: maps `dL/d attrs` to `dL/d pixel RGB`.
pub fn features_backward<F: Real>(
    feats: &FeaturePoints<F>,
    grad_attrs: &[F],
    mask: &Mask,
) -> Vec<[F; 3]> {
    let (w, h) = (feats.width, feats.height);
    let (cw, _) = cell_grid(w, h);
    let inv = F::one() / F::lit((FEATURE_STRIDE * FEATURE_STRIDE) as f64);
    let mut planes: Vec<Vec<F>> = (0..FEATURE_DIM).map(|_| vec![F::zero(); w * h]).collect();
    for (k, &cell) in feats.cells.iter().enumerate() {
        let (cr, cc) = (cell / cw, cell % cw);
        for (ch, plane) in planes.iter_mut().enumerate() {
            let g = grad_attrs[k * FEATURE_DIM + ch] * inv;
            for dr in 0..FEATURE_STRIDE {
                for dc in 0..FEATURE_STRIDE {
                    plane[(cr * FEATURE_STRIDE + dr) * w + cc * FEATURE_STRIDE + dc] += g;
                }
            }
        }
    }
    let gx = filter_adjoint(&planes[0], w, h, &sobel_taps(0));
    let gy = filter_adjoint(&planes[1], w, h, &sobel_taps(1));
    let bt = blur_taps();
    let blurred = [
        filter_adjoint(&planes[2], w, h, &bt),
        filter_adjoint(&planes[3], w, h, &bt),
        filter_adjoint(&planes[4], w, h, &bt),
    ];
    let mut out = vec![[F::zero(); 3]; w * h];
    for p in 0..w * h {
        if !mask.data[p] {
            continue;
        }
        let gl = gx[p] + gy[p];
        for c in 0..3 {
            out[p][c] = F::lit(LUMA[c]) * gl + blurred[c][p] + planes[5 + c][p];
        }
    }
    out
}
