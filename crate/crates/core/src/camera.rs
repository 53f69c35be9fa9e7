//! Weak-perspective camera: rotate by a quaternion, drop depth, scale, translate.
//!
//! Image frame: x to the right, y up, both in `[-1, 1]`. The camera looks
//! down `-z`, so larger rotated `z` is closer to the viewer.

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::tensorcore::Real;

/// Quaternions shorter than this cannot be normalized.
pub const MIN_QUAT_NORM: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose<F> {
    pub scale: F,
    pub translation: [F; 2],
    /// `[w, x, y, z]`, renormalized before use.
    pub quat: [F; 4],
}

/// Gradient with respect to the seven raw pose parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseGrad<F> {
    pub scale: F,
    pub translation: [F; 2],
    pub quat: [F; 4],
}

pub const POSE_PARAMS: usize = 7;

impl<F: Real> CameraPose<F> {
    pub fn identity() -> Self {
        Self {
            scale: F::one(),
            translation: [F::zero(); 2],
            quat: [F::one(), F::zero(), F::zero(), F::zero()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > F::zero()) || !self.scale.is_finite() {
            return Err(Error::invalid(format!(
                "camera scale must be positive, got {}",
                self.scale
            )));
        }
        let n = quat_norm(self.quat);
        if !(n > F::lit(MIN_QUAT_NORM)) || !n.is_finite() {
            return Err(Error::invalid("camera quaternion is near zero"));
        }
        if !self.translation.iter().all(|t| t.is_finite()) {
            return Err(Error::NonFinite("camera translation".into()));
        }
        Ok(())
    }

    /// `[s, tx, ty, qw, qx, qy, qz]`
    pub fn to_params(&self) -> [F; POSE_PARAMS] {
        [
            self.scale,
            self.translation[0],
            self.translation[1],
            self.quat[0],
            self.quat[1],
            self.quat[2],
            self.quat[3],
        ]
    }

    pub fn from_params(p: &[F]) -> Self {
        Self {
            scale: p[0],
            translation: [p[1], p[2]],
            quat: [p[3], p[4], p[5], p[6]],
        }
    }

    pub fn rotation(&self) -> Result<[[F; 3]; 3]> {
        Ok(rotation_matrix(normalize_quat(self.quat)?))
    }
}

impl<F: Real> PoseGrad<F> {
    pub fn to_params(&self) -> [F; POSE_PARAMS] {
        [
            self.scale,
            self.translation[0],
            self.translation[1],
            self.quat[0],
            self.quat[1],
            self.quat[2],
            self.quat[3],
        ]
    }
}

fn quat_norm<F: Real>(q: [F; 4]) -> F {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

pub fn normalize_quat<F: Real>(q: [F; 4]) -> Result<[F; 4]> {
    let n = quat_norm(q);
    if !(n > F::lit(MIN_QUAT_NORM)) || !n.is_finite() {
        return Err(Error::invalid("quaternion is near zero"));
    }
    Ok([q[0] / n, q[1] / n, q[2] / n, q[3] / n])
}

/// Rotation matrix of a unit quaternion `[w, x, y, z]`.
pub fn rotation_matrix<F: Real>(q: [F; 4]) -> [[F; 3]; 3] {
    let [w, x, y, z] = q;
    let two = F::lit(2.0);
    let one = F::one();
    [
        [
            one - two * (y * y + z * z),
            two * (x * y - w * z),
            two * (x * z + w * y),
        ],
        [
            two * (x * y + w * z),
            one - two * (x * x + z * z),
            two * (y * z - w * x),
        ],
        [
            two * (x * z - w * y),
            two * (y * z + w * x),
            one - two * (x * x + y * y),
        ],
    ]
}

/// Pulls `dL/dR` back to the raw (unnormalized) quaternion.
fn rotation_backward<F: Real>(raw: [F; 4], g: &[[F; 3]; 3]) -> Result<[F; 4]> {
    let n = quat_norm(raw);
    let q = normalize_quat(raw)?;
    let [w, x, y, z] = q;
    let two = F::lit(2.0);
    // dR_ij / dq for each unit-quaternion component, contracted with g.
    let dw = two * (-z * g[0][1] + y * g[0][2] + z * g[1][0] - x * g[1][2] - y * g[2][0] + x * g[2][1]);
    let dx = two
        * (y * g[0][1] + z * g[0][2] + y * g[1][0] - two * x * g[1][1] - w * g[1][2]
            + z * g[2][0]
            + w * g[2][1]
            - two * x * g[2][2]);
    let dy = two
        * (-two * y * g[0][0] + x * g[0][1] + w * g[0][2] + x * g[1][0] + z * g[1][2]
            - w * g[2][0]
            + z * g[2][1]
            - two * y * g[2][2]);
    let dz = two
        * (-two * z * g[0][0] - w * g[0][1] + x * g[0][2] + w * g[1][0] - two * z * g[1][1]
            + y * g[1][2]
            + x * g[2][0]
            + y * g[2][1]);
    let gq = [dw, dx, dy, dz];
    // Through q = r / |r|: dL/dr = (gq - q (q . gq)) / |r|
    let proj = q[0] * gq[0] + q[1] * gq[1] + q[2] * gq[2] + q[3] * gq[3];
    Ok([
        (gq[0] - q[0] * proj) / n,
        (gq[1] - q[1] * proj) / n,
        (gq[2] - q[2] * proj) / n,
        (gq[3] - q[3] * proj) / n,
    ])
}

#[inline]
fn apply<F: Real>(r: &[[F; 3]; 3], v: Vec3<F>) -> Vec3<F> {
    [
        r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
        r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
        r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
    ]
}

pub fn quat_rotate<F: Real>(quat: [F; 4], v: &[Vec3<F>]) -> Result<Vec<Vec3<F>>> {
    let r = rotation_matrix(normalize_quat(quat)?);
    Ok(v.iter().map(|&p| apply(&r, p)).collect())
}

/// Projected image positions plus per-vertex rotated `z`.
#[derive(Debug, Clone)]
pub struct Projection<F> {
    pub points: Vec<[F; 2]>,
    pub depth: Vec<F>,
}

pub fn project_weak_perspective<F: Real>(
    pose: &CameraPose<F>,
    v: &[Vec3<F>],
) -> Result<Projection<F>> {
    pose.validate()?;
    let r = pose.rotation()?;
    let mut points = Vec::with_capacity(v.len());
    let mut depth = Vec::with_capacity(v.len());
    for &p in v {
        let q = apply(&r, p);
        points.push([
            pose.scale * q[0] + pose.translation[0],
            pose.scale * q[1] + pose.translation[1],
        ]);
        depth.push(q[2]);
    }
    Ok(Projection { points, depth })
}

/// Backward of [`project_weak_perspective`] given `dL/dp_i`.
pub fn project_backward<F: Real>(
    pose: &CameraPose<F>,
    v: &[Vec3<F>],
    grad_points: &[[F; 2]],
) -> Result<(PoseGrad<F>, Vec<Vec3<F>>)> {
    let r = pose.rotation()?;
    let s = pose.scale;
    let mut gpose = PoseGrad::default();
    let mut g_r = [[F::zero(); 3]; 3];
    let mut gv = Vec::with_capacity(v.len());
    for (&p, g) in v.iter().zip(grad_points) {
        let q = apply(&r, p);
        gpose.scale += g[0] * q[0] + g[1] * q[1];
        gpose.translation[0] += g[0];
        gpose.translation[1] += g[1];
        // dL/d(Rp) restricted to the two kept rows.
        let gq = [s * g[0], s * g[1]];
        for row in 0..2 {
            for col in 0..3 {
                g_r[row][col] += gq[row] * p[col];
            }
        }
        gv.push([
            r[0][0] * gq[0] + r[1][0] * gq[1],
            r[0][1] * gq[0] + r[1][1] * gq[1],
            r[0][2] * gq[0] + r[1][2] * gq[1],
        ]);
    }
    gpose.quat = rotation_backward(pose.quat, &g_r)?;
    Ok((gpose, gv))
}

/// Quaternion for a rotation of `angle` radians about `axis`.
pub fn axis_angle<F: Real>(axis: Vec3<F>, angle: F) -> [F; 4] {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let half = angle * F::lit(0.5);
    let (s, c) = half.sin_cos();
    [c, axis[0] / n * s, axis[1] / n * s, axis[2] / n * s]
}

/// Hamilton product `a * b` (apply `b` first, then `a`).
pub fn quat_mul<F: Real>(a: [F; 4], b: [F; 4]) -> [F; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}
