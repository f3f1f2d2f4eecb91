//! Pinhole projection, SE(3) pose algebra and rigid-flow synthesis.
//!
//! A pixel `p` with depth `d` back-projects to `X = d * K⁻¹ p`; the pose maps
//! it to `X' = R X + t` in the second camera and `K X'` is dehomogenized to the
//! corresponding pixel. The rigid flow is that pixel minus `p`.

use alloc::vec::Vec;
use core::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::field::{DepthMap, FlowField, ValidMask};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3(pub [f64; 3]);

impl Vec3 {
    pub const ZERO: Vec3 = Vec3([0.0; 3]);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3([x, y, z])
    }

    pub fn x(&self) -> f64 {
        self.0[0]
    }

    pub fn y(&self) -> f64 {
        self.0[1]
    }

    pub fn z(&self) -> f64 {
        self.0[2]
    }

    pub fn dot(&self, o: &Vec3) -> f64 {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    pub fn cross(&self, o: &Vec3) -> Vec3 {
        let [a, b, c] = self.0;
        let [d, e, f] = o.0;
        Vec3([b * f - c * e, c * d - a * f, a * e - b * d])
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.dot(self))
    }

    pub fn normalized(&self) -> Vec3 {
        *self * (1.0 / self.norm())
    }

    /// Skew-symmetric matrix `[v]×` with `[v]× w = v × w`.
    pub fn hat(&self) -> Mat3 {
        let [x, y, z] = self.0;
        Mat3([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3([-self.0[0], -self.0[1], -self.0[2]])
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }
}

/// Row-major 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    pub const ZERO: Mat3 = Mat3([[0.0; 3]; 3]);

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    pub fn scale(&self, s: f64) -> Mat3 {
        let mut out = self.0;
        for row in out.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        Mat3(out)
    }

    pub fn column(&self, j: usize) -> Vec3 {
        Vec3([self.0[0][j], self.0[1][j], self.0[2][j]])
    }

    /// Largest absolute entry of `self - other`.
    pub fn max_abs_diff(&self, other: &Mat3) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                worst = worst.max(libm::fabs(self.0[i][j] - other.0[i][j]));
            }
        }
        worst
    }
}

impl Add for Mat3 {
    type Output = Mat3;
    fn add(self, o: Mat3) -> Mat3 {
        Mat3(core::array::from_fn(|i| {
            core::array::from_fn(|j| self.0[i][j] + o.0[i][j])
        }))
    }
}

impl Sub for Mat3 {
    type Output = Mat3;
    fn sub(self, o: Mat3) -> Mat3 {
        self + o.scale(-1.0)
    }
}

impl Mul for Mat3 {
    type Output = Mat3;
    fn mul(self, o: Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.0[i][0] * o.0[0][j] + self.0[i][1] * o.0[1][j] + self.0[i][2] * o.0[2][j];
            }
        }
        Mat3(out)
    }
}

impl Mul<Vec3> for Mat3 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3([
            m[0][0] * v.0[0] + m[0][1] * v.0[1] + m[0][2] * v.0[2],
            m[1][0] * v.0[0] + m[1][1] * v.0[1] + m[1][2] * v.0[2],
            m[2][0] * v.0[0] + m[2][1] * v.0[1] + m[2][2] * v.0[2],
        ])
    }
}

/// Pinhole intrinsics `K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx.is_finite() && fx > 0.0 && fy.is_finite() && fy > 0.0) {
            return Err(Error::InvalidParameter("focal lengths must be positive"));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidParameter("principal point must be finite"));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// `K⁻¹ (x, y, 1)`.
    #[inline]
    pub fn unproject(&self, x: f64, y: f64) -> Vec3 {
        Vec3([(x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0])
    }

    /// Intrinsics of the next pyramid level. A coarse pixel averages a 2×2
    /// block, so its center lies at fine coordinate `2 x + 0.5`.
    pub fn downscaled(&self) -> Intrinsics {
        Intrinsics {
            fx: self.fx * 0.5,
            fy: self.fy * 0.5,
            cx: (self.cx - 0.5) * 0.5,
            cy: (self.cy - 0.5) * 0.5,
        }
    }
}

/// Rigid transform `X ↦ R X + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSE3 {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl PoseSE3 {
    pub const IDENTITY: PoseSE3 = PoseSE3 {
        rotation: Mat3::IDENTITY,
        translation: Vec3::ZERO,
    };

    /// Validates orthonormality (tolerance 1e-9) and `det R = +1`.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let pose = Self { rotation, translation };
        if !pose.is_valid(1e-9) {
            return Err(Error::InvalidParameter("rotation is not a proper orthonormal matrix"));
        }
        Ok(pose)
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            rotation: Mat3::IDENTITY,
            translation: t,
        }
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let rtr = self.rotation.transpose() * self.rotation;
        rtr.max_abs_diff(&Mat3::IDENTITY) <= tol
            && libm::fabs(self.rotation.determinant() - 1.0) <= tol
            && self.translation.0.iter().all(|v| v.is_finite())
    }

    #[inline]
    pub fn transform(&self, p: Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        PoseSE3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> PoseSE3 {
        let rt = self.rotation.transpose();
        PoseSE3 {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Axis-angle + translation parameters (log map of the rotation).
    pub fn to_params(&self) -> PoseParams {
        let w = so3_log(&self.rotation);
        let t = self.translation;
        PoseParams([w.0[0], w.0[1], w.0[2], t.0[0], t.0[1], t.0[2]])
    }
}

pub fn compose(a: &PoseSE3, b: &PoseSE3) -> PoseSE3 {
    a.compose(b)
}

pub fn invert(t: &PoseSE3) -> PoseSE3 {
    t.inverse()
}

/// Minimal 6-DoF pose parameterization: axis-angle rotation `(ωx, ωy, ωz)`
/// followed by translation `(tx, ty, tz)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseParams(pub [f64; 6]);

impl PoseParams {
    pub fn rotation_vector(&self) -> Vec3 {
        Vec3([self.0[0], self.0[1], self.0[2]])
    }

    pub fn translation(&self) -> Vec3 {
        Vec3([self.0[3], self.0[4], self.0[5]])
    }

    pub fn to_pose(&self) -> PoseSE3 {
        pose_from_params(self)
    }
}

pub fn pose_from_params(params: &PoseParams) -> PoseSE3 {
    PoseSE3 {
        rotation: so3_exp(&params.rotation_vector()),
        translation: params.translation(),
    }
}

// sin θ / θ, (1 - cos θ) / θ², (θ - sin θ) / θ³ with series near zero.
fn rodrigues_coefficients(theta: f64) -> (f64, f64, f64) {
    let t2 = theta * theta;
    if theta < 1e-4 {
        (
            1.0 - t2 / 6.0 + t2 * t2 / 120.0,
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
        )
    } else {
        let (s, c) = (libm::sin(theta), libm::cos(theta));
        (s / theta, (1.0 - c) / t2, (theta - s) / (t2 * theta))
    }
}

/// Rodrigues formula.
pub fn so3_exp(w: &Vec3) -> Mat3 {
    let (a, b, _) = rodrigues_coefficients(w.norm());
    let k = w.hat();
    Mat3::IDENTITY + k.scale(a) + (k * k).scale(b)
}

/// Left Jacobian of SO(3): `exp(ω + δ) ≈ exp(J_l(ω) δ) exp(ω)`.
pub fn so3_left_jacobian(w: &Vec3) -> Mat3 {
    let (_, b, c) = rodrigues_coefficients(w.norm());
    let k = w.hat();
    Mat3::IDENTITY + k.scale(b) + (k * k).scale(c)
}

/// Inverse of [`so3_exp`] with angle in `[0, π]`.
pub fn so3_log(r: &Mat3) -> Vec3 {
    let m = &r.0;
    let axis2 = Vec3([m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]]);
    let sin_theta = 0.5 * axis2.norm();
    let cos_theta = 0.5 * (r.trace() - 1.0);
    let theta = libm::atan2(sin_theta, cos_theta);
    if theta < 1e-4 {
        // θ / (2 sin θ) ≈ 1/2 + θ²/12
        return axis2 * (0.5 + theta * theta / 12.0);
    }
    if cos_theta > 0.0 {
        return axis2 * (theta / (2.0 * sin_theta));
    }
    // Near π the antisymmetric part vanishes; recover the axis from
    // k kᵀ = ((R + Rᵀ)/2 - cos θ I) / (1 - cos θ).
    let sym = (*r + r.transpose()).scale(0.5) - Mat3::IDENTITY.scale(cos_theta);
    let kkt = sym.scale(1.0 / (1.0 - cos_theta));
    let j = (0..3).max_by(|&a, &b| kkt.0[a][a].total_cmp(&kkt.0[b][b])).unwrap_or(0);
    let mut axis = kkt.column(j) * (1.0 / libm::sqrt(kkt.0[j][j].max(f64::MIN_POSITIVE)));
    if axis.dot(&axis2) < 0.0 {
        axis = -axis;
    }
    axis.normalized() * theta
}

/// Result of projecting one pixel through a depth and a pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub x: f64,
    pub y: f64,
    /// Depth of the transformed point in the target camera.
    pub z: f64,
}

impl Projection {
    pub fn in_front(&self) -> bool {
        self.z > 0.0
    }
}

/// Projects pixel `(x, y)` with depth `depth` through `pose`.
///
/// The returned coordinates are only meaningful when [`Projection::in_front`]
/// holds; callers mark other pixels invalid.
pub fn project_pixel(x: f64, y: f64, depth: f64, k: &Intrinsics, pose: &PoseSE3) -> Projection {
    let p = pose.transform(k.unproject(x, y) * depth);
    let z = p.z();
    Projection {
        x: k.fx * p.x() / z + k.cx,
        y: k.fy * p.y() / z + k.cy,
        z,
    }
}

/// Forward rigid flow `F(p) = p' - p` and the in-front-of-camera mask.
/// Pixels landing behind the camera get zero flow and `false` in the mask.
pub fn rigid_flow(depth: &DepthMap, k: &Intrinsics, pose: &PoseSE3) -> (FlowField, ValidMask) {
    let (w, h) = depth.dims();
    let per_pixel = par::map_indices(w * h, |i| {
        let (x, y) = ((i % w) as f64, (i / w) as f64);
        let p = project_pixel(x, y, depth.values()[i], k, pose);
        if p.in_front() {
            (p.x - x, p.y - y, true)
        } else {
            (0.0, 0.0, false)
        }
    });
    split_flow(w, h, per_pixel)
}

fn split_flow(w: usize, h: usize, per_pixel: Vec<(f64, f64, bool)>) -> (FlowField, ValidMask) {
    let mut u = Vec::with_capacity(w * h);
    let mut v = Vec::with_capacity(w * h);
    let mut bits = Vec::with_capacity(w * h);
    for (a, b, ok) in per_pixel {
        u.push(a);
        v.push(b);
        bits.push(ok);
    }
    (
        FlowField::from_parts_unchecked(w, h, u, v),
        ValidMask::new(w, h, bits).expect("mask sized from field"),
    )
}

/// Which way the pose parameters are applied when synthesizing flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `T(params)`, frame t → t+1.
    Forward,
    /// `T(params)⁻¹`, frame t+1 → t.
    Backward,
}

/// Derivatives of one pixel's rigid flow `(u, v)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlowJacobian {
    /// `∂(u, v) / ∂depth`.
    pub depth: [f64; 2],
    /// `∂(u, v) / ∂params`, rows u and v.
    pub params: [[f64; 6]; 2],
}

/// Rigid flow plus its per-pixel Jacobian with respect to depth and the pose
/// parameters. Pixels behind the camera have zero flow and zero Jacobian.
pub fn rigid_flow_with_jacobian(
    depth: &DepthMap,
    k: &Intrinsics,
    params: &PoseParams,
    direction: Direction,
) -> (FlowField, ValidMask, Vec<FlowJacobian>) {
    let w_vec = params.rotation_vector();
    let rot = so3_exp(&w_vec);
    let jl = so3_left_jacobian(&w_vec);
    let t = params.translation();
    let rt = rot.transpose();
    let (w, h) = depth.dims();

    let per_pixel = par::map_indices(w * h, |i| {
        let (x, y) = ((i % w) as f64, (i / w) as f64);
        let ray = k.unproject(x, y);
        let d = depth.values()[i];
        let point = ray * d;
        // Transformed point, its derivative wrt depth and wrt (ω, t).
        let (q, dq_dd, dq_dw, dq_dt) = match direction {
            Direction::Forward => {
                let rp = rot * point;
                (rp + t, rot * ray, rp.hat().scale(-1.0) * jl, Mat3::IDENTITY)
            }
            Direction::Backward => {
                let diff = point - t;
                (rt * diff, rt * ray, rt * diff.hat() * jl, rt.scale(-1.0))
            }
        };
        let z = q.z();
        if z <= 0.0 {
            return (0.0, 0.0, false, FlowJacobian::default());
        }
        let inv_z = 1.0 / z;
        let px = k.fx * q.x() * inv_z + k.cx;
        let py = k.fy * q.y() * inv_z + k.cy;
        // ∂(px, py)/∂q
        let jp = [
            [k.fx * inv_z, 0.0, -k.fx * q.x() * inv_z * inv_z],
            [0.0, k.fy * inv_z, -k.fy * q.y() * inv_z * inv_z],
        ];
        let mut jac = FlowJacobian::default();
        for (r, row) in jp.iter().enumerate() {
            jac.depth[r] = (0..3).map(|c| row[c] * dq_dd.0[c]).sum();
            for j in 0..3 {
                jac.params[r][j] = (0..3).map(|c| row[c] * dq_dw.0[c][j]).sum();
                jac.params[r][3 + j] = (0..3).map(|c| row[c] * dq_dt.0[c][j]).sum();
            }
        }
        (px - x, py - y, true, jac)
    });

    let mut flat = Vec::with_capacity(w * h);
    let mut jacobians = Vec::with_capacity(w * h);
    for (u, v, ok, jac) in per_pixel {
        flat.push((u, v, ok));
        jacobians.push(jac);
    }
    let (flow, mask) = split_flow(w, h, flat);
    (flow, mask, jacobians)
}
