//! Chamfer distance between colored point sets with a focal spatial weight.
//!
//! For points `x` in `A` and `y` in `B`, with `ds` the Euclidean distance of
//! positions and `da` that of appearance vectors,
//!
//! ```text
//! D(x, y) = max((ds + eps_s)^alpha, 1) * (da + eps_a)
//! loss    = 0.5 * (mean_x min_y D(x, y) + mean_y min_x D(x, y))
//! ```
//!
//! The spatial factor only weights the match: gradients flow through `da`
//! alone, and positions are treated as constants.

use crate::error::{Error, Result};
use crate::render::ColoredPointSet;
use crate::tensorcore::kdtree::box_distance;
use crate::tensorcore::{dist, KdTree, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChamferTexParams<F> {
    pub eps_s: F,
    pub eps_a: F,
    pub alpha: F,
}

impl<F: Real> Default for ChamferTexParams<F> {
    fn default() -> Self {
        Self {
            eps_s: F::lit(0.9),
            eps_a: F::one(),
            alpha: F::one(),
        }
    }
}

impl<F: Real> ChamferTexParams<F> {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_s > F::zero() && self.eps_s < F::one()) {
            return Err(Error::invalid(format!("eps_s must lie in (0, 1), got {}", self.eps_s)));
        }
        if !(self.eps_a >= F::zero()) {
            return Err(Error::invalid(format!("eps_a must be >= 0, got {}", self.eps_a)));
        }
        if !(self.alpha > F::zero()) {
            return Err(Error::invalid(format!("alpha must be > 0, got {}", self.alpha)));
        }
        Ok(())
    }

    /// `max((ds + eps_s)^alpha, 1)`
    #[inline]
    pub fn spatial_factor(&self, ds: F) -> F {
        (ds + self.eps_s).powf(self.alpha).max(F::one())
    }
}

/// The ε_s values compared in the tolerance sweep.
pub const EPS_S_SWEEP: [f64; 5] = [0.999, 0.99, 0.98, 0.95, 0.9];

/// How positions enter the pairwise distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpatialTerm {
    Focal,
    /// Spatial factor fixed to 1: matching by appearance only.
    Ignored,
}

#[derive(Debug, Clone)]
pub struct TextureLossGrad<F> {
    pub value: F,
    /// `dL/d attrs` of `A`, row-major like `A.attrs`.
    pub grad_a: Vec<F>,
    pub grad_b: Vec<F>,
}

fn check<F: Real>(a: &ColoredPointSet<F>, b: &ColoredPointSet<F>, p: &ChamferTexParams<F>) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::empty("chamfer texture operand"));
    }
    if a.dim != b.dim {
        return Err(Error::shape(format!(
            "attribute widths differ: {} vs {}",
            a.dim, b.dim
        )));
    }
    p.validate()
}

/// Mean over `from` of the best match in `into`; accumulates gradients of
/// half that mean when requested.
fn one_side<F: Real>(
    from: &ColoredPointSet<F>,
    into: &ColoredPointSet<F>,
    tree: &KdTree<F>,
    p: &ChamferTexParams<F>,
    spatial: SpatialTerm,
    grads: Option<(&mut [F], &mut [F])>,
) -> F {
    let scale = F::lit(0.5) / F::lit(from.len() as f64);
    let factor = |ds: F| match spatial {
        SpatialTerm::Focal => p.spatial_factor(ds),
        SpatialTerm::Ignored => F::one(),
    };
    let mut total = F::zero();
    let mut grads = grads;
    for i in 0..from.len() {
        let q = from.positions[i];
        let qa = from.attr(i);
        let (j, d) = tree
            .nearest_by(
                |j| {
                    let ds = dist(&q, &into.positions[j]);
                    factor(ds) * (dist(qa, into.attr(j)) + p.eps_a)
                },
                |lo, hi| {
                    let ds = box_distance(&q, &lo[..2], &hi[..2]);
                    factor(ds) * (box_distance(qa, &lo[2..], &hi[2..]) + p.eps_a)
                },
            )
            .expect("non-empty target set");
        total += d;
        if let Some((gf, gi)) = grads.as_mut() {
            let ja = into.attr(j);
            let da = dist(qa, ja);
            if da > F::zero() {
                let w = factor(dist(&q, &into.positions[j])) * scale / da;
                for k in 0..from.dim {
                    let g = w * (qa[k] - ja[k]);
                    gf[i * from.dim + k] += g;
                    gi[j * from.dim + k] -= g;
                }
            }
        }
    }
    total / F::lit(from.len() as f64)
}

/// Tree over `(position, attributes)` rows.
fn joint_tree<F: Real>(s: &ColoredPointSet<F>) -> KdTree<F> {
    let mut rows = Vec::with_capacity(s.len() * (2 + s.dim));
    for i in 0..s.len() {
        rows.extend_from_slice(&s.positions[i]);
        rows.extend_from_slice(s.attr(i));
    }
    KdTree::new(&rows, 2 + s.dim)
}

fn evaluate<F: Real>(
    a: &ColoredPointSet<F>,
    b: &ColoredPointSet<F>,
    p: &ChamferTexParams<F>,
    spatial: SpatialTerm,
    want_grad: bool,
) -> Result<TextureLossGrad<F>> {
    check(a, b, p)?;
    let ga = joint_tree(a);
    let gb = joint_tree(b);
    let mut grad_a = if want_grad { vec![F::zero(); a.attrs.len()] } else { Vec::new() };
    let mut grad_b = if want_grad { vec![F::zero(); b.attrs.len()] } else { Vec::new() };
    let sum = if want_grad {
        one_side(a, b, &gb, p, spatial, Some((&mut grad_a, &mut grad_b)))
            + one_side(b, a, &ga, p, spatial, Some((&mut grad_b, &mut grad_a)))
    } else {
        one_side(a, b, &gb, p, spatial, None) + one_side(b, a, &ga, p, spatial, None)
    };
    let value = F::lit(0.5) * sum;
    Ok(TextureLossGrad {
        value,
        grad_a,
        grad_b,
    })
}

pub fn chamfer_set_distance<F: Real>(
    a: &ColoredPointSet<F>,
    b: &ColoredPointSet<F>,
    p: &ChamferTexParams<F>,
) -> Result<F> {
    Ok(evaluate(a, b, p, SpatialTerm::Focal, false)?.value)
}

pub fn chamfer_set_distance_grad<F: Real>(
    a: &ColoredPointSet<F>,
    b: &ColoredPointSet<F>,
    p: &ChamferTexParams<F>,
) -> Result<TextureLossGrad<F>> {
    evaluate(a, b, p, SpatialTerm::Focal, true)
}

/// Variant that ignores positions entirely, for qualitative comparison.
pub fn appearance_only_distance<F: Real>(
    a: &ColoredPointSet<F>,
    b: &ColoredPointSet<F>,
    p: &ChamferTexParams<F>,
) -> Result<F> {
    Ok(evaluate(a, b, p, SpatialTerm::Ignored, false)?.value)
}

/// Exhaustive `O(|A| |B|)` evaluation used to cross-check the pruned search.
pub fn chamfer_set_distance_exhaustive<F: Real>(
    a: &ColoredPointSet<F>,
    b: &ColoredPointSet<F>,
    p: &ChamferTexParams<F>,
) -> Result<F> {
    check(a, b, p)?;
    let side = |x: &ColoredPointSet<F>, y: &ColoredPointSet<F>| {
        let mut acc = F::zero();
        for i in 0..x.len() {
            let mut best = F::infinity();
            for j in 0..y.len() {
                let d = p.spatial_factor(dist(&x.positions[i], &y.positions[j]))
                    * (dist(x.attr(i), y.attr(j)) + p.eps_a);
                best = best.min(d);
            }
            acc += best;
        }
        acc / F::lit(x.len() as f64)
    };
    Ok(F::lit(0.5) * (side(a, b) + side(b, a)))
}
