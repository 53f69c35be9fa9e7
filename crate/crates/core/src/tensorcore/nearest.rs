//! Exact nearest-neighbour queries over a uniform bucket grid.
//!
//! Queries take an arbitrary matching cost together with a lower bound of
//! that cost as a function of spatial distance; cells are visited in
//! Chebyshev rings and the search stops once the bound exceeds the best cost
//! found. The result is identical to an exhaustive scan, including the tie
//! rule: among equal costs the lowest index wins.

use crate::tensorcore::Real;

#[derive(Debug, Clone)]
pub struct BucketGrid<F, const D: usize> {
    origin: [F; D],
    cell: F,
    dims: [usize; D],
    starts: Vec<u32>,
    items: Vec<u32>,
    points: Vec<[F; D]>,
}

impl<F: Real, const D: usize> BucketGrid<F, D> {
    /// Builds a grid holding roughly two points per occupied cell.
    pub fn new(points: &[[F; D]]) -> Self {
        let n = points.len().max(1);
        let mut lo = [F::zero(); D];
        let mut hi = [F::zero(); D];
        if let Some(p0) = points.first() {
            lo = *p0;
            hi = *p0;
        }
        for p in points {
            for k in 0..D {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let mut extent = [F::zero(); D];
        let mut max_extent = F::zero();
        for k in 0..D {
            extent[k] = hi[k] - lo[k];
            max_extent = max_extent.max(extent[k]);
        }
        let cell = if max_extent > F::zero() {
            // Volume of the bounding box with flat axes padded to a tenth of the widest.
            let pad = max_extent * F::lit(0.1);
            let vol = extent
                .iter()
                .fold(F::one(), |acc, &e| acc * e.max(pad));
            let per_point = vol * F::lit(2.0) / F::lit(n as f64);
            per_point.powf(F::one() / F::lit(D as f64))
        } else {
            F::one()
        };
        let mut dims = [1usize; D];
        for k in 0..D {
            let c = (extent[k] / cell).floor().to_f64_lossy() as usize + 1;
            dims[k] = c.clamp(1, 4096);
        }
        let total: usize = dims.iter().product();

        let mut grid = Self {
            origin: lo,
            cell,
            dims,
            starts: vec![0; total + 1],
            items: Vec::with_capacity(points.len()),
            points: points.to_vec(),
        };
        let keys: Vec<usize> = points.iter().map(|p| grid.flat(grid.cell_of(p))).collect();
        for &k in &keys {
            grid.starts[k + 1] += 1;
        }
        for i in 0..total {
            grid.starts[i + 1] += grid.starts[i];
        }
        let mut fill = grid.starts.clone();
        grid.items.resize(points.len(), 0);
        for (i, &k) in keys.iter().enumerate() {
            grid.items[fill[k] as usize] = i as u32;
            fill[k] += 1;
        }
        // Ascending index order inside a cell is preserved by the stable fill above.
        grid
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[F; D]] {
        &self.points
    }

    fn cell_of(&self, p: &[F; D]) -> [usize; D] {
        let mut c = [0usize; D];
        for k in 0..D {
            let t = ((p[k] - self.origin[k]) / self.cell).floor().to_f64_lossy();
            c[k] = if t <= 0.0 {
                0
            } else {
                (t as usize).min(self.dims[k] - 1)
            };
        }
        c
    }

    fn flat(&self, c: [usize; D]) -> usize {
        let mut f = 0;
        for k in 0..D {
            f = f * self.dims[k] + c[k];
        }
        f
    }

    /// Squared distance from `q` to the axis-aligned box of cell `c`.
    fn cell_dist2(&self, q: &[F; D], c: &[usize; D]) -> F {
        let mut acc = F::zero();
        for k in 0..D {
            let lo = self.origin[k] + self.cell * F::lit(c[k] as f64);
            let hi = lo + self.cell;
            let d = if q[k] < lo {
                lo - q[k]
            } else if q[k] > hi {
                q[k] - hi
            } else {
                F::zero()
            };
            acc += d * d;
        }
        acc
    }

    /// Minimum of `cost(j)` over all points, visiting only cells that can beat
    /// the current best. `bound(d)` must not exceed `cost(j)` for any point at
    /// spatial distance `d`, and must be non-decreasing in `d`.
    ///
    /// Returns `None` for an empty grid.
    pub fn nearest_by(
        &self,
        q: &[F; D],
        mut cost: impl FnMut(usize) -> F,
        bound: impl Fn(F) -> F,
    ) -> Option<(usize, F)> {
        if self.points.is_empty() {
            return None;
        }
        let home = self.cell_of(q);
        // Distance from q to the home cell (non-zero when q lies outside the grid).
        let home_gap = self.cell_dist2(q, &home).sqrt();
        let max_ring = self.dims.iter().copied().max().unwrap_or(1);
        let mut best: Option<(usize, F)> = None;

        for ring in 0..=max_ring {
            if ring > 0 {
                if let Some((_, b)) = best {
                    let gap = home_gap.max(self.cell * F::lit((ring - 1) as f64));
                    if bound(gap) > b {
                        break;
                    }
                }
            }
            self.visit_ring(&home, ring, &mut |c| {
                if let Some((_, b)) = best {
                    if bound(self.cell_dist2(q, &c).sqrt()) > b {
                        return;
                    }
                }
                let f = self.flat(c);
                for &j in &self.items[self.starts[f] as usize..self.starts[f + 1] as usize] {
                    let j = j as usize;
                    let v = cost(j);
                    best = match best {
                        Some((bj, bv)) if bv < v || (bv == v && bj < j) => Some((bj, bv)),
                        _ => Some((j, v)),
                    };
                }
            });
        }
        best
    }

    /// Plain Euclidean nearest neighbour.
    pub fn nearest(&self, q: &[F; D]) -> Option<(usize, F)> {
        let pts = &self.points;
        self.nearest_by(
            q,
            |j| {
                let mut acc = F::zero();
                for k in 0..D {
                    let d = q[k] - pts[j][k];
                    acc += d * d;
                }
                acc.sqrt()
            },
            |d| d,
        )
    }

    fn visit_ring(&self, home: &[usize; D], ring: usize, visit: &mut impl FnMut([usize; D])) {
        let r = ring as isize;
        let mut lo = [0isize; D];
        let mut hi = [0isize; D];
        for k in 0..D {
            lo[k] = (home[k] as isize - r).max(0);
            hi[k] = (home[k] as isize + r).min(self.dims[k] as isize - 1);
        }
        let mut c = lo;
        loop {
            let on_shell = (0..D).any(|k| (c[k] - home[k] as isize).abs() == r);
            if on_shell {
                let mut u = [0usize; D];
                for k in 0..D {
                    u[k] = c[k] as usize;
                }
                visit(u);
            }
            // Odometer increment over the clipped cube.
            let mut k = D;
            loop {
                if k == 0 {
                    return;
                }
                k -= 1;
                if c[k] < hi[k] {
                    c[k] += 1;
                    break;
                }
                c[k] = lo[k];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorcore::Rng;

    fn brute<const D: usize>(pts: &[[f64; D]], q: &[f64; D]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (j, p) in pts.iter().enumerate() {
            let d = (0..D).map(|k| (q[k] - p[k]).powi(2)).sum::<f64>().sqrt();
            if d < best.1 {
                best = (j, d);
            }
        }
        best
    }

    #[test]
    fn matches_brute_force_2d() {
        let mut rng = Rng::new(11);
        let pts: Vec<[f64; 2]> = (0..500)
            .map(|_| [rng.uniform() * 2.0 - 1.0, rng.uniform() * 0.5])
            .collect();
        let grid = BucketGrid::new(&pts);
        for _ in 0..300 {
            let q = [rng.uniform() * 4.0 - 2.0, rng.uniform() * 3.0 - 1.0];
            assert_eq!(grid.nearest(&q).unwrap(), brute(&pts, &q));
        }
    }

    #[test]
    fn matches_brute_force_3d() {
        let mut rng = Rng::new(12);
        let pts: Vec<[f64; 3]> = (0..400)
            .map(|_| [rng.normal(), rng.normal(), rng.normal() * 0.1])
            .collect();
        let grid = BucketGrid::new(&pts);
        for _ in 0..200 {
            let q = [rng.normal(), rng.normal(), rng.normal()];
            assert_eq!(grid.nearest(&q).unwrap(), brute(&pts, &q));
        }
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        let pts = vec![[1.0f64, 0.0], [0.0, 0.0], [-1.0, 0.0], [0.0, 0.0]];
        let grid = BucketGrid::new(&pts);
        assert_eq!(grid.nearest(&[0.0, 0.0]).unwrap().0, 1);
        assert_eq!(grid.nearest(&[0.0, 5.0]).unwrap().0, 1);
    }

    #[test]
    fn single_point_and_empty() {
        let grid = BucketGrid::new(&[[0.5f64, 0.5]]);
        assert_eq!(grid.nearest(&[3.0, 3.0]).unwrap().0, 0);
        let empty = BucketGrid::<f64, 2>::new(&[]);
        assert!(empty.nearest(&[0.0, 0.0]).is_none());
    }
}
