//! SO(3) / SE(3) / se(3) math for the pose composition layer.
//!
//! Rotations are stored as unit quaternions in the canonical hemisphere
//! (`w >= 0`); matrices are produced on demand. Tangent vectors are ordered
//! `(omega, v)` everywhere, and gradients with respect to a pose are expressed
//! in its right-perturbation tangent: `T * exp(delta)`.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use std::f64::consts::PI;
use std::fmt;
use thiserror::Error;

/// Below this rotation angle the closed-form exp/log/Jacobian coefficients
/// switch to their Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-5;

/// Taylor threshold for the higher-order SE(3) Jacobian coefficients, whose
/// closed forms cancel catastrophically well above `SMALL_ANGLE`.
const JACOBIAN_SERIES_ANGLE: f64 = 1e-3;

/// Smallest rejected distance of a rotation angle from pi in `log`.
pub const NEAR_PI_MARGIN: f64 = 1e-6;

const ORTHO_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LieError {
    #[error("non-finite input to {0}")]
    NonFinite(&'static str),
    #[error("rotation angle {0} is outside the principal branch |omega| < pi")]
    OutsidePrincipalBranch(f64),
    #[error("rotation angle too close to pi for a unique logarithm")]
    AngleNearPi,
    #[error("matrix is not a rotation (orthogonality error {ortho:.3e}, det {det})")]
    NotARotation { ortho: f64, det: f64 },
    #[error("quaternion has zero norm")]
    ZeroQuaternion,
}

/// Skew-symmetric matrix `[omega]_x`, so that `hat(a) * b == a.cross(&b)`.
pub fn hat(omega: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -omega.z, omega.y, //
        omega.z, 0.0, -omega.x, //
        -omega.y, omega.x, 0.0,
    )
}

/// Inverse of [`hat`]; reads the lower-triangle entries.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Unit quaternion `w + xi + yj + zk`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn vec(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn conj(&self) -> Quat {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn neg(&self) -> Quat {
        Quat::new(-self.w, -self.x, -self.y, -self.z)
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Hamilton product `self * rhs`.
    pub fn mul(&self, rhs: &Quat) -> Quat {
        let (a, b) = (self, rhs);
        Quat::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            // Paired so that q.conj() * q has an exactly zero vector part.
            (a.w * b.x + a.x * b.w) + (a.y * b.z - a.z * b.y),
            (a.w * b.y + a.y * b.w) + (a.z * b.x - a.x * b.z),
            (a.w * b.z + a.z * b.w) + (a.x * b.y - a.y * b.x),
        )
    }

    /// Scales to unit norm and flips into the `w >= 0` hemisphere. When `w`
    /// is exactly zero the first nonzero vector component is made positive.
    pub fn canonical(&self) -> Result<Quat, LieError> {
        if !self.is_finite() {
            return Err(LieError::NonFinite("quaternion"));
        }
        let n = self.norm();
        if n == 0.0 {
            return Err(LieError::ZeroQuaternion);
        }
        let q = Quat::new(self.w / n, self.x / n, self.y / n, self.z / n);
        let flip = if q.w != 0.0 {
            q.w < 0.0
        } else if q.x != 0.0 {
            q.x < 0.0
        } else if q.y != 0.0 {
            q.y < 0.0
        } else {
            q.z < 0.0
        };
        Ok(if flip { q.neg() } else { q })
    }

    /// Rotates `p` by this (unit) quaternion.
    pub fn rotate(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let u = self.vec();
        let t = 2.0 * u.cross(p);
        p + self.w * t + u.cross(&t)
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        let Quat { w, x, y, z } = *self;
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Shepperd's method: picks the largest diagonal combination as pivot.
    pub fn from_matrix(m: &Matrix3<f64>) -> Quat {
        let tr = m.trace();
        let q = if tr > m[(0, 0)] && tr > m[(1, 1)] && tr > m[(2, 2)] {
            let s = (1.0 + tr).sqrt() * 2.0;
            Quat::new(
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            Quat::new(
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            Quat::new(
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            Quat::new(
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        };
        q.canonical().unwrap_or(Quat::IDENTITY)
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        2.0 * self.vec().norm().atan2(self.w.abs())
    }
}

/// Validated 3x3 rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn new(m: Matrix3<f64>) -> Result<Self, LieError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(LieError::NonFinite("rotation matrix"));
        }
        let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
        let det = m.determinant();
        if ortho > ORTHO_TOL || (det - 1.0).abs() > ORTHO_TOL {
            return Err(LieError::NotARotation { ortho, det });
        }
        Ok(RotationMatrix(m))
    }

    pub fn identity() -> Self {
        RotationMatrix(Matrix3::identity())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn to_quat(&self) -> Quat {
        Quat::from_matrix(&self.0)
    }

    pub fn transpose(&self) -> RotationMatrix {
        RotationMatrix(self.0.transpose())
    }

    pub fn mul(&self, rhs: &RotationMatrix) -> RotationMatrix {
        // Re-project through the quaternion to keep the product on SO(3).
        RotationMatrix(Quat::from_matrix(&(self.0 * rhs.0)).to_matrix())
    }

    /// Geodesic distance (rotation angle of `self * other^T`), radians.
    pub fn angle_to(&self, other: &RotationMatrix) -> f64 {
        Quat::from_matrix(&(self.0 * other.0.transpose())).angle()
    }
}

/// Element of se(3): rotation `omega` (rad) and translation `v` (m).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Twist {
    pub omega: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl Twist {
    pub fn new(omega: Vector3<f64>, v: Vector3<f64>) -> Result<Self, LieError> {
        if omega.iter().chain(v.iter()).any(|c| !c.is_finite()) {
            return Err(LieError::NonFinite("twist"));
        }
        let angle = omega.norm();
        if angle >= PI {
            return Err(LieError::OutsidePrincipalBranch(angle));
        }
        Ok(Twist { omega, v })
    }

    pub fn zero() -> Self {
        Twist { omega: Vector3::zeros(), v: Vector3::zeros() }
    }

    pub fn from_vector(xi: &Vector6<f64>) -> Result<Self, LieError> {
        Twist::new(xi.fixed_rows::<3>(0).into(), xi.fixed_rows::<3>(3).into())
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let mut out = Vector6::zeros();
        out.fixed_rows_mut::<3>(0).copy_from(&self.omega);
        out.fixed_rows_mut::<3>(3).copy_from(&self.v);
        out
    }
}

/// Element of SE(3) as a canonical unit quaternion plus translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    q: Quat,
    t: Vector3<f64>,
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Pose(t: [{:.4}, {:.4}, {:.4}], q: [w: {:.4}, x: {:.4}, y: {:.4}, z: {:.4}])",
            self.t.x, self.t.y, self.t.z, self.q.w, self.q.x, self.q.y, self.q.z
        )
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose { q: Quat::IDENTITY, t: Vector3::zeros() }
    }

    /// Normalizes and canonicalizes `q`.
    pub fn new(q: Quat, t: Vector3<f64>) -> Result<Self, LieError> {
        if t.iter().any(|c| !c.is_finite()) {
            return Err(LieError::NonFinite("translation"));
        }
        Ok(Pose { q: q.canonical()?, t })
    }

    /// Like [`Pose::new`], but keeps `q` bit-for-bit when it is already a
    /// canonical unit quaternion (to 1e-12). Used when reading stored poses.
    pub fn from_stored(q: Quat, t: Vector3<f64>) -> Result<Self, LieError> {
        let p = Pose::new(q, t)?;
        if (q.norm() - 1.0).abs() <= 1e-12 && q.canonical()?.to_array().map(f64::signum) == q.to_array().map(f64::signum) {
            return Ok(Pose { q, t });
        }
        Ok(p)
    }

    pub fn from_rotation(r: &RotationMatrix, t: Vector3<f64>) -> Result<Self, LieError> {
        Pose::new(r.to_quat(), t)
    }

    pub fn from_translation(t: Vector3<f64>) -> Result<Self, LieError> {
        Pose::new(Quat::IDENTITY, t)
    }

    pub fn quat(&self) -> Quat {
        self.q
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.t
    }

    pub fn rotation(&self) -> RotationMatrix {
        RotationMatrix(self.q.to_matrix())
    }

    pub fn is_finite(&self) -> bool {
        self.q.is_finite() && self.t.iter().all(|c| c.is_finite())
    }

    /// Homogeneous 4x4 form.
    pub fn to_homogeneous(&self) -> nalgebra::Matrix4<f64> {
        let mut m = nalgebra::Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.q.to_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.t);
        m
    }

    /// `(qw, qx, qy, qz, tx, ty, tz)`.
    pub fn to_vec7(&self) -> [f64; 7] {
        [self.q.w, self.q.x, self.q.y, self.q.z, self.t.x, self.t.y, self.t.z]
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.q.rotate(p) + self.t
    }

    pub fn compose(&self, rhs: &Pose) -> Pose {
        compose(self, rhs)
    }

    pub fn inverse(&self) -> Pose {
        inverse(self)
    }
}

/// Unit quaternion of `exp([omega]_x)`. No branch restriction.
pub fn quat_exp(omega: &Vector3<f64>) -> Quat {
    let theta = omega.norm();
    let (c, s) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 8.0, 0.5 - t2 / 48.0)
    } else {
        let half = 0.5 * theta;
        (half.cos(), half.sin() / theta)
    };
    let q = Quat::new(c, s * omega.x, s * omega.y, s * omega.z);
    q.canonical().unwrap_or(Quat::IDENTITY)
}

/// Rotation vector of a unit quaternion (principal branch).
fn quat_log(q: &Quat) -> Result<Vector3<f64>, LieError> {
    let q = q.canonical()?;
    let u = q.vec();
    let s = u.norm();
    let theta = 2.0 * s.atan2(q.w);
    if theta >= PI - NEAR_PI_MARGIN {
        return Err(LieError::AngleNearPi);
    }
    if theta < SMALL_ANGLE {
        // theta / sin(theta/2) -> 2 + theta^2 / 12
        Ok(u * (2.0 + theta * theta / 12.0))
    } else {
        Ok(u * (theta / s))
    }
}

/// `1 - cos(theta)` without cancellation at small angles.
fn one_minus_cos(theta: f64) -> f64 {
    let h = (0.5 * theta).sin();
    2.0 * h * h
}

/// Rodrigues' formula.
pub fn exp_so3(omega: &Vector3<f64>) -> Result<RotationMatrix, LieError> {
    if omega.iter().any(|c| !c.is_finite()) {
        return Err(LieError::NonFinite("exp_so3"));
    }
    let theta = omega.norm();
    if theta >= PI {
        return Err(LieError::OutsidePrincipalBranch(theta));
    }
    let k = hat(omega);
    let (a, b) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        (theta.sin() / theta, one_minus_cos(theta) / (theta * theta))
    };
    Ok(RotationMatrix(Matrix3::identity() + a * k + b * k * k))
}

pub fn log_so3(r: &RotationMatrix) -> Result<Vector3<f64>, LieError> {
    if r.0.trace() <= -1.0 + NEAR_PI_MARGIN * NEAR_PI_MARGIN {
        return Err(LieError::AngleNearPi);
    }
    quat_log(&Quat::from_matrix(&r.0))
}

/// Left Jacobian of SO(3), `V(omega)` in the SE(3) exponential.
pub fn so3_left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let k = hat(omega);
    let (a, b) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let t2 = theta * theta;
        (one_minus_cos(theta) / t2, (theta - theta.sin()) / (t2 * theta))
    };
    Matrix3::identity() + a * k + b * k * k
}

pub fn so3_left_jacobian_inv(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let k = hat(omega);
    let c = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0
    } else {
        let t2 = theta * theta;
        (1.0 - theta * theta.sin() / (2.0 * one_minus_cos(theta))) / t2
    };
    Matrix3::identity() - 0.5 * k + c * k * k
}

pub fn exp_se3(xi: &Twist) -> Pose {
    let q = quat_exp(&xi.omega);
    let t = so3_left_jacobian(&xi.omega) * xi.v;
    Pose { q, t }
}

pub fn log_se3(pose: &Pose) -> Result<Twist, LieError> {
    let omega = quat_log(&pose.q)?;
    let v = so3_left_jacobian_inv(&omega) * pose.t;
    Ok(Twist { omega, v })
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    let q = a.q.mul(&b.q).canonical().unwrap_or(Quat::IDENTITY);
    let t = a.t + a.q.rotate(&b.t);
    Pose { q, t }
}

pub fn inverse(p: &Pose) -> Pose {
    let qi = p.q.conj();
    let t = -qi.rotate(&p.t);
    Pose { q: qi.canonical().unwrap_or(Quat::IDENTITY), t }
}

/// Adjoint of `T` acting on `(omega, v)` tangents: `T exp(xi) T^-1 = exp(Ad xi)`.
pub fn adjoint(p: &Pose) -> Matrix6<f64> {
    let r = p.q.to_matrix();
    let mut ad = Matrix6::zeros();
    ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
    ad.fixed_view_mut::<3, 3>(3, 0).copy_from(&(hat(&p.t) * r));
    ad
}

/// Off-diagonal block of the SE(3) left Jacobian.
fn se3_jacobian_q(omega: &Vector3<f64>, v: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let t2 = theta * theta;
    let (c1, c2, c3) = if theta < JACOBIAN_SERIES_ANGLE {
        let t4 = t2 * t2;
        (
            1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0,
            1.0 / 24.0 - t2 / 720.0 + t4 / 40320.0,
            1.0 / 120.0 - t2 / 2520.0 + t4 / 120960.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let t4 = t2 * t2;
        (
            (theta - s) / (t2 * theta),
            (t2 + 2.0 * c - 2.0) / (2.0 * t4),
            (2.0 * theta - 3.0 * s + theta * c) / (2.0 * t4 * theta),
        )
    };
    let w = hat(omega);
    let p = hat(v);
    let wp = w * p;
    let pw = p * w;
    let wpw = wp * w;
    let ww = w * w;
    0.5 * p + c1 * (wp + pw + wpw) + c2 * (ww * p + pw * w - 3.0 * wpw) + c3 * (wpw * w + ww * p * w)
}

/// Left Jacobian of SE(3) in `(omega, v)` ordering.
pub fn se3_left_jacobian(xi: &Twist) -> Matrix6<f64> {
    let j = so3_left_jacobian(&xi.omega);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&se3_jacobian_q(&xi.omega, &xi.v));
    out
}

/// Right Jacobian: `exp(xi + d) ~= exp(xi) exp(J_r(xi) d)`.
pub fn se3_right_jacobian(xi: &Twist) -> Matrix6<f64> {
    se3_left_jacobian(&Twist { omega: -xi.omega, v: -xi.v })
}

/// Pulls a gradient expressed in the output pose tangent back to the twist.
pub fn exp_se3_backward(xi: &Twist, grad_out: &Vector6<f64>) -> Vector6<f64> {
    se3_right_jacobian(xi).transpose() * grad_out
}

/// Gradients of `c = a * b` with respect to the tangents of `a` and `b`.
pub fn compose_backward(
    _a: &Pose,
    b: &Pose,
    grad_out: &Vector6<f64>,
) -> (Vector6<f64>, Vector6<f64>) {
    let grad_a = adjoint(&inverse(b)).transpose() * grad_out;
    (grad_a, *grad_out)
}

/// Converts a gradient with respect to the stored representation
/// `(q, t)` of `pose` into its tangent gradient.
pub fn tangent_gradient(pose: &Pose, grad_q: &[f64; 4], grad_t: &Vector3<f64>) -> Vector6<f64> {
    let q = pose.q;
    let mut out = Vector6::zeros();
    // d(q * (1, d/2)) / d(d_j) = 0.5 * q * e_j
    let basis = [Quat::new(0.0, 1.0, 0.0, 0.0), Quat::new(0.0, 0.0, 1.0, 0.0), Quat::new(0.0, 0.0, 0.0, 1.0)];
    for (j, e) in basis.iter().enumerate() {
        let dq = q.mul(e).to_array();
        out[j] = 0.5 * (0..4).map(|k| grad_q[k] * dq[k]).sum::<f64>();
    }
    let gv = q.conj().rotate(grad_t);
    out.fixed_rows_mut::<3>(3).copy_from(&gv);
    out
}
