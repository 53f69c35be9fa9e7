//! Chamfer distance between projected vertices and silhouette pixel centers.

use crate::error::{Error, Result};
use crate::tensorcore::{dist, BucketGrid, Real};

/// Foreground pixel centers with a search structure, built once per target.
#[derive(Debug, Clone)]
pub struct MaskTarget<F> {
    grid: BucketGrid<F, 2>,
}

impl<F: Real> MaskTarget<F> {
    pub fn new(points: &[[F; 2]]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::empty("silhouette point set"));
        }
        Ok(Self {
            grid: BucketGrid::new(points),
        })
    }

    pub fn points(&self) -> &[[F; 2]] {
        self.grid.points()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn loss(&self, projected: &[[F; 2]]) -> Result<F> {
        Ok(self.eval(projected, false)?.0)
    }

    /// Loss and `dL/d projected`.
    pub fn loss_grad(&self, projected: &[[F; 2]]) -> Result<(F, Vec<[F; 2]>)> {
        self.eval(projected, true)
    }

    fn eval(&self, sv: &[[F; 2]], want_grad: bool) -> Result<(F, Vec<[F; 2]>)> {
        if sv.is_empty() {
            return Err(Error::empty("projected vertex set"));
        }
        let sf = self.grid.points();
        let gv = BucketGrid::new(sv);
        let half = F::lit(0.5);
        let wv = half / F::lit(sv.len() as f64);
        let wf = half / F::lit(sf.len() as f64);
        let mut grad = if want_grad { vec![[F::zero(); 2]; sv.len()] } else { Vec::new() };
        let mut acc_v = F::zero();
        for (i, v) in sv.iter().enumerate() {
            let (j, d) = self.grid.nearest(v).expect("non-empty");
            acc_v += d;
            if want_grad && d > F::zero() {
                let f = sf[j];
                grad[i][0] += wv * (v[0] - f[0]) / d;
                grad[i][1] += wv * (v[1] - f[1]) / d;
            }
        }
        let mut acc_f = F::zero();
        for f in sf {
            let (i, d) = gv.nearest(f).expect("non-empty");
            acc_f += d;
            if want_grad && d > F::zero() {
                let v = sv[i];
                grad[i][0] += wf * (v[0] - f[0]) / d;
                grad[i][1] += wf * (v[1] - f[1]) / d;
            }
        }
        Ok((acc_v * wv + acc_f * wf, grad))
    }
}

/// `0.5 * (mean_v min_f |v - f| + mean_f min_v |v - f|)`.
pub fn chamfer_mask_loss<F: Real>(projected: &[[F; 2]], mask_points: &[[F; 2]]) -> Result<F> {
    MaskTarget::new(mask_points)?.loss(projected)
}

pub fn chamfer_mask_loss_grad<F: Real>(
    projected: &[[F; 2]],
    mask_points: &[[F; 2]],
) -> Result<(F, Vec<[F; 2]>)> {
    MaskTarget::new(mask_points)?.loss_grad(projected)
}

/// Exhaustive scan over all pairs.
pub fn chamfer_2d_exhaustive<F: Real>(a: &[[F; 2]], b: &[[F; 2]]) -> Result<F> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::empty("chamfer operand"));
    }
    let side = |x: &[[F; 2]], y: &[[F; 2]]| {
        x.iter()
            .map(|p| y.iter().map(|q| dist(p, q)).fold(F::infinity(), F::min))
            .sum::<F>()
            / F::lit(x.len() as f64)
    };
    Ok(F::lit(0.5) * (side(a, b) + side(b, a)))
}
