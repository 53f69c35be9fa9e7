//! Exact branch-and-bound nearest neighbour search over a k-d tree with a
//! caller-supplied cost and box lower bound.
//!
//! The tree only organizes points; "nearest" is whatever the cost closure
//! says, as long as the bound closure never exceeds the cost of any point
//! inside the box it is given.

use super::Real;

const LEAF_SIZE: usize = 8;
const NONE: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Node {
    start: u32,
    end: u32,
    left: u32,
    right: u32,
}

#[derive(Debug, Clone)]
pub struct KdTree<F> {
    dims: usize,
    /// Original index of each slot, in tree order.
    order: Vec<u32>,
    nodes: Vec<Node>,
    /// Per node bounding box: `dims` lows then `dims` highs.
    boxes: Vec<F>,
}

impl<F: Real> KdTree<F> {
    /// Builds over `points`, a row-major `n x dims` array.
    pub fn new(points: &[F], dims: usize) -> Self {
        assert!(dims > 0, "k-d tree needs at least one dimension");
        assert_eq!(points.len() % dims, 0, "point array is not a multiple of dims");
        let n = points.len() / dims;
        let mut tree = Self {
            dims,
            order: (0..n as u32).collect(),
            nodes: Vec::new(),
            boxes: Vec::new(),
        };
        if n > 0 {
            tree.build(points, 0, n);
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    fn build(&mut self, points: &[F], start: usize, end: usize) -> u32 {
        let d = self.dims;
        let mut lo = vec![F::infinity(); d];
        let mut hi = vec![F::neg_infinity(); d];
        for &i in &self.order[start..end] {
            let p = &points[i as usize * d..(i as usize + 1) * d];
            for k in 0..d {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            start: start as u32,
            end: end as u32,
            left: NONE,
            right: NONE,
        });
        self.boxes.extend_from_slice(&lo);
        self.boxes.extend_from_slice(&hi);
        if end - start <= LEAF_SIZE {
            return id;
        }
        let axis = (0..d)
            .max_by(|&a, &b| (hi[a] - lo[a]).partial_cmp(&(hi[b] - lo[b])).unwrap().then(b.cmp(&a)))
            .unwrap();
        if hi[axis] == lo[axis] {
            // All points coincide.
            return id;
        }
        let mid = start + (end - start) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            let (x, y) = (points[a as usize * d + axis], points[b as usize * d + axis]);
            x.partial_cmp(&y).unwrap().then(a.cmp(&b))
        });
        let left = self.build(points, start, mid);
        let right = self.build(points, mid, end);
        self.nodes[id as usize].left = left;
        self.nodes[id as usize].right = right;
        id
    }

    fn bounds(&self, node: u32) -> (&[F], &[F]) {
        let d = self.dims;
        let b = &self.boxes[node as usize * 2 * d..(node as usize + 1) * 2 * d];
        b.split_at(d)
    }

    /// Index and cost of the cheapest point, ties going to the lowest index.
    ///
    /// `bound(lo, hi)` must be a lower bound of `cost` over the box.
    pub fn nearest_by(
        &self,
        cost: impl Fn(usize) -> F,
        bound: impl Fn(&[F], &[F]) -> F,
    ) -> Option<(usize, F)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, F::infinity());
        let mut stack: Vec<(u32, F)> = vec![(0, F::neg_infinity())];
        while let Some((node, lb)) = stack.pop() {
            if lb > best.1 {
                continue;
            }
            let n = &self.nodes[node as usize];
            if n.left == NONE {
                for &i in &self.order[n.start as usize..n.end as usize] {
                    let i = i as usize;
                    let c = cost(i);
                    if c < best.1 || (c == best.1 && i < best.0) {
                        best = (i, c);
                    }
                }
                continue;
            }
            let (ll, lh) = self.bounds(n.left);
            let (rl, rh) = self.bounds(n.right);
            let bl = bound(ll, lh);
            let br = bound(rl, rh);
            // Push the farther child first so the nearer one is searched first.
            if bl <= br {
                stack.push((n.right, br));
                stack.push((n.left, bl));
            } else {
                stack.push((n.left, bl));
                stack.push((n.right, br));
            }
        }
        Some(best)
    }
}

/// Euclidean distance from `q` to the box `[lo, hi]`.
#[inline]
pub fn box_distance<F: Real>(q: &[F], lo: &[F], hi: &[F]) -> F {
    let mut s = F::zero();
    for k in 0..q.len() {
        let d = if q[k] < lo[k] {
            lo[k] - q[k]
        } else if q[k] > hi[k] {
            q[k] - hi[k]
        } else {
            continue;
        };
        s += d * d;
    }
    s.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorcore::{dist, Rng};

    #[test]
    fn matches_brute_force_euclidean() {
        let mut rng = Rng::new(1);
        for dims in [1, 2, 5] {
            let n = 700;
            let pts: Vec<f64> = (0..n * dims).map(|_| rng.uniform()).collect();
            let tree = KdTree::new(&pts, dims);
            for _ in 0..200 {
                let q: Vec<f64> = (0..dims).map(|_| 1.2 * rng.uniform() - 0.1).collect();
                let got = tree
                    .nearest_by(|i| dist(&q, &pts[i * dims..(i + 1) * dims]), |lo, hi| box_distance(&q, lo, hi))
                    .unwrap();
                let mut want = (0, f64::INFINITY);
                for i in 0..n {
                    let c = dist(&q, &pts[i * dims..(i + 1) * dims]);
                    if c < want.1 {
                        want = (i, c);
                    }
                }
                assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn duplicates_resolve_to_lowest_index() {
        let pts = vec![0.5f64; 2 * 40];
        let tree = KdTree::new(&pts, 2);
        let q = [0.1, 0.2];
        let got = tree.nearest_by(|i| dist(&q, &pts[2 * i..2 * i + 2]), |lo, hi| box_distance(&q, lo, hi));
        assert_eq!(got.unwrap().0, 0);
        assert!(KdTree::<f64>::new(&[], 3).nearest_by(|_| 0.0, |_, _| 0.0).is_none());
    }
}
