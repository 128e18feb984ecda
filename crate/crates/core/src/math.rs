//! Small SO(3) toolbox shared by the dynamics, filters and the window solver.
//!
//! Rotations are right-perturbed throughout: `R ← R · Exp(δθ)`.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use std::f64::consts::PI;

/// Standard gravity magnitude (m/s²).
pub const GRAVITY: f64 = 9.81;

/// Gravity vector in the z-up world frame.
pub fn gravity_vector(g: f64) -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -g)
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn so3_exp(phi: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::new(*phi).into_inner()
}

pub fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    quat_log(&UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r)))
}

/// Rotation vector of a unit quaternion, accurate near the identity.
pub fn quat_log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let (mut w, mut v) = (q.w, q.imag());
    if w < 0.0 {
        w = -w;
        v = -v;
    }
    let n = v.norm();
    if n < 1e-12 {
        return v * (2.0 / w);
    }
    v * (2.0 * n.atan2(w) / n)
}

/// Right Jacobian of SO(3).
pub fn right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let w = skew(phi);
    if theta < 1e-6 {
        return Matrix3::identity() - 0.5 * w + w * w / 6.0;
    }
    let t2 = theta * theta;
    Matrix3::identity() - (1.0 - theta.cos()) / t2 * w + (theta - theta.sin()) / (t2 * theta) * w * w
}

/// Inverse of the right Jacobian of SO(3).
pub fn right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let w = skew(phi);
    if theta < 1e-6 {
        return Matrix3::identity() + 0.5 * w + w * w / 12.0;
    }
    let t2 = theta * theta;
    let coeff = 1.0 / t2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Matrix3::identity() + 0.5 * w + coeff * w * w
}

/// Roll, pitch, yaw (ZYX convention) of a body-to-world rotation.
pub fn euler_zyx(q: &UnitQuaternion<f64>) -> (f64, f64, f64) {
    q.euler_angles()
}

pub fn from_euler_zyx(roll: f64, pitch: f64, yaw: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_euler_angles(roll, pitch, yaw)
}

/// Wraps an angle into (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = (a + PI).rem_euclid(2.0 * PI) - PI;
    if x <= -PI {
        x += 2.0 * PI;
    }
    x
}

/// Tilt between the body z axis and world up: `arccos(cos θ cos φ)`.
pub fn tilt_angle(roll: f64, pitch: f64) -> f64 {
    (pitch.cos() * roll.cos()).clamp(-1.0, 1.0).acos()
}

/// Rotation that takes world up `e_z` into the given body-frame direction,
/// i.e. returns `R` with `Rᵀ e_z = up_body` and zero yaw about the world axis.
pub fn attitude_from_up_body(up_body: &Vector3<f64>, yaw: f64) -> UnitQuaternion<f64> {
    let u = up_body.normalize();
    // R^T e_z = u  <=>  R u = e_z
    let tilt = UnitQuaternion::rotation_between(&u, &Vector3::z())
        .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), PI));
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw) * tilt
}
