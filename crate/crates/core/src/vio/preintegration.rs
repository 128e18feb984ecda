use nalgebra::{Matrix3, SMatrix, Vector3};

use super::types::ImuNoise;
use crate::error::{Error, Result};
use crate::math::{right_jacobian, skew, so3_exp};
use crate::sensorsim::ImuSample;

pub type Matrix9 = SMatrix<f64, 9, 9>;

/// Relative-motion pseudo-measurement between two frames, with first-order
/// bias Jacobians and the covariance of `[δθ, δv, δp]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Preintegrated {
    pub dt: f64,
    pub delta_r: Matrix3<f64>,
    pub delta_v: Vector3<f64>,
    pub delta_p: Vector3<f64>,
    /// Bias linearization point.
    pub accel_bias: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
    pub dr_dbg: Matrix3<f64>,
    pub dv_dba: Matrix3<f64>,
    pub dv_dbg: Matrix3<f64>,
    pub dp_dba: Matrix3<f64>,
    pub dp_dbg: Matrix3<f64>,
    pub covariance: Matrix9,
    /// False when the samples leave a gap wider than the allowed maximum.
    pub valid: bool,
}

/// `∫₀¹ Exp(sθ) ds` and `∫₀¹ (1 − s) Exp(sθ) ds`.
fn exp_integrals(theta: &Vector3<f64>) -> (Matrix3<f64>, Matrix3<f64>) {
    let t = theta.norm();
    let w = skew(theta);
    let w2 = w * w;
    let i = Matrix3::identity();
    if t < 1e-4 {
        return (i + w / 2.0 + w2 / 6.0, i / 2.0 + w / 6.0 + w2 / 24.0);
    }
    let (s, c) = t.sin_cos();
    let t2 = t * t;
    let g1 = i + (1.0 - c) / t2 * w + (t - s) / (t2 * t) * w2;
    let g2 = i / 2.0 + (t - s) / (t2 * t) * w + (t2 / 2.0 + c - 1.0) / (t2 * t2) * w2;
    (g1, g2)
}

/// Integrates samples over `[t0, t1]`, each held until the next one.
/// Within a hold the body rate and specific force are constant, for which
/// the rotation, velocity and position increments are exact.
pub fn preintegrate_imu(
    samples: &[ImuSample],
    t0: f64,
    t1: f64,
    accel_bias: &Vector3<f64>,
    gyro_bias: &Vector3<f64>,
    noise: &ImuNoise,
    max_gap: f64,
) -> Result<Preintegrated> {
    if samples.is_empty() {
        return Err(Error::UnderConstrained("no IMU samples between frames".into()));
    }
    if !(t1 > t0) {
        return Err(Error::Config(format!("preintegration interval [{t0}, {t1}] is empty")));
    }
    let mut p = Preintegrated {
        dt: t1 - t0,
        delta_r: Matrix3::identity(),
        delta_v: Vector3::zeros(),
        delta_p: Vector3::zeros(),
        accel_bias: *accel_bias,
        gyro_bias: *gyro_bias,
        dr_dbg: Matrix3::zeros(),
        dv_dba: Matrix3::zeros(),
        dv_dbg: Matrix3::zeros(),
        dp_dba: Matrix3::zeros(),
        dp_dbg: Matrix3::zeros(),
        covariance: Matrix9::zeros(),
        valid: true,
    };
    let first = samples.partition_point(|s| s.time <= t0).saturating_sub(1);
    if samples[first].time > t0 + max_gap || samples[first].time < t0 - max_gap {
        p.valid = false;
    }
    for (i, s) in samples.iter().enumerate().skip(first) {
        let start = if i == first { t0 } else { s.time.max(t0) };
        let end = samples.get(i + 1).map_or(t1, |n| n.time).min(t1);
        if end - start > max_gap {
            p.valid = false;
        }
        if end <= start {
            if s.time >= t1 {
                break;
            }
            continue;
        }
        let h = end - start;
        let w = s.gyro - gyro_bias;
        let a = s.accel - accel_bias;
        let theta = w * h;
        let (g1, g2) = exp_integrals(&theta);
        let step = so3_exp(&theta);
        let jr = right_jacobian(&theta);
        let rk = p.delta_r;
        let a_hat = skew(&a);

        // covariance of [δθ, δv, δp], first-order in the hold length
        let mut f = Matrix9::identity();
        f.fixed_view_mut::<3, 3>(0, 0).copy_from(&step.transpose());
        f.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-rk * a_hat * h));
        f.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-0.5 * rk * a_hat * h * h));
        f.fixed_view_mut::<3, 3>(6, 3).copy_from(&(Matrix3::identity() * h));
        let mut bg = SMatrix::<f64, 9, 3>::zeros();
        bg.fixed_view_mut::<3, 3>(0, 0).copy_from(&(jr * h));
        let mut ba = SMatrix::<f64, 9, 3>::zeros();
        ba.fixed_view_mut::<3, 3>(3, 0).copy_from(&(rk * h));
        ba.fixed_view_mut::<3, 3>(6, 0).copy_from(&(0.5 * rk * h * h));
        let qg = noise.gyro_density.powi(2) / h;
        let qa = noise.accel_density.powi(2) / h;
        p.covariance = f * p.covariance * f.transpose() + bg * bg.transpose() * qg + ba * ba.transpose() * qa;

        p.dp_dba += p.dv_dba * h - rk * g2 * h * h;
        p.dp_dbg += p.dv_dbg * h - 0.5 * rk * a_hat * p.dr_dbg * h * h;
        p.dv_dba -= rk * g1 * h;
        p.dv_dbg -= rk * a_hat * p.dr_dbg * h;
        p.dr_dbg = step.transpose() * p.dr_dbg - jr * h;

        p.delta_p += p.delta_v * h + rk * g2 * a * h * h;
        p.delta_v += rk * g1 * a * h;
        p.delta_r = rk * step;
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn sample(t: f64, w: Vector3<f64>, a: Vector3<f64>) -> ImuSample {
        ImuSample { time: t, gyro: w, accel: a }
    }

    #[test]
    fn still_gravity_only() {
        let g = Vector3::new(0.0, 0.0, 9.81);
        let s: Vec<_> = (0..4).map(|k| sample(k as f64 * 0.005, Vector3::zeros(), g)).collect();
        let p =
            preintegrate_imu(&s, 0.0, 0.02, &Vector3::zeros(), &Vector3::zeros(), &ImuNoise::default(), 0.1).unwrap();
        assert_relative_eq!(p.delta_r, Matrix3::identity(), epsilon = 1e-15);
        // the pseudo-measurement removes gravity only in the residual
        assert_relative_eq!(p.delta_v, g * 0.02, epsilon = 1e-12);
        assert_relative_eq!(p.delta_p, g * 0.5 * 0.02 * 0.02, epsilon = 1e-12);
        assert!(p.valid);
    }

    #[test]
    fn constant_rate_rotation() {
        let w = Vector3::new(0.0, 0.0, 20.0);
        let s: Vec<_> = (0..4).map(|k| sample(k as f64 * 0.005, w, Vector3::zeros())).collect();
        let p =
            preintegrate_imu(&s, 0.0, 0.02, &Vector3::zeros(), &Vector3::zeros(), &ImuNoise::default(), 0.1).unwrap();
        assert_relative_eq!(p.delta_r, so3_exp(&(w * 0.02)), epsilon = 1e-6);
        assert_relative_eq!(p.delta_v, Vector3::zeros());
    }

    #[test]
    fn gaps_invalidate() {
        let s = [sample(0.0, Vector3::zeros(), Vector3::zeros()), sample(0.15, Vector3::zeros(), Vector3::zeros())];
        let p =
            preintegrate_imu(&s, 0.0, 0.2, &Vector3::zeros(), &Vector3::zeros(), &ImuNoise::default(), 0.1).unwrap();
        assert!(!p.valid);
        assert!(
            preintegrate_imu(&[], 0.0, 0.2, &Vector3::zeros(), &Vector3::zeros(), &ImuNoise::default(), 0.1).is_err()
        );
    }

    /// Dead reckoning with many tiny Euler steps under the same held samples.
    fn fine_oracle(s: &[ImuSample], t0: f64, t1: f64) -> (Matrix3<f64>, Vector3<f64>, Vector3<f64>) {
        let n = 20_000;
        let h = (t1 - t0) / n as f64;
        let (mut r, mut v, mut p) = (Matrix3::identity(), Vector3::zeros(), Vector3::zeros());
        for k in 0..n {
            let t = t0 + (k as f64 + 0.5) * h;
            let i = s.partition_point(|x| x.time <= t).saturating_sub(1);
            let half = so3_exp(&(s[i].gyro * h / 2.0));
            let a_mid = r * half * s[i].accel;
            p += v * h + 0.5 * a_mid * h * h;
            v += a_mid * h;
            r *= half * half;
        }
        (r, v, p)
    }

    #[test]
    fn random_trajectory_matches_dead_reckoning() {
        let mut rng = stream(4, 0);
        let mut u = |k: f64| k * (rng.random::<f64>() * 2.0 - 1.0);
        for _ in 0..5 {
            let s: Vec<_> = (0..4)
                .map(|k| {
                    sample(
                        k as f64 * 0.005,
                        Vector3::new(u(5.0), u(5.0), 20.0 + u(5.0)),
                        Vector3::new(u(10.0), u(10.0), 9.81 + u(5.0)),
                    )
                })
                .collect();
            let p = preintegrate_imu(&s, 0.0, 0.02, &Vector3::zeros(), &Vector3::zeros(), &ImuNoise::default(), 0.1)
                .unwrap();
            let (r, v, x) = fine_oracle(&s, 0.0, 0.02);
            assert_relative_eq!(p.delta_r, r, epsilon = 1e-5);
            assert_relative_eq!(p.delta_v, v, epsilon = 1e-5);
            assert_relative_eq!(p.delta_p, x, epsilon = 1e-5);
        }
    }

    #[test]
    fn accel_bias_jacobians_are_exact() {
        let mut rng = stream(6, 0);
        let mut u = |k: f64| k * (rng.random::<f64>() * 2.0 - 1.0);
        let s: Vec<_> = (0..4)
            .map(|k| {
                sample(k as f64 * 0.005, Vector3::new(u(3.0), u(3.0), u(15.0)), Vector3::new(u(5.0), u(5.0), 9.81))
            })
            .collect();
        let n = ImuNoise::default();
        let b = Vector3::zeros();
        let base = preintegrate_imu(&s, 0.0, 0.02, &b, &b, &n, 0.1).unwrap();
        let db = Vector3::new(0.01, -0.02, 0.03);
        let shifted = preintegrate_imu(&s, 0.0, 0.02, &db, &b, &n, 0.1).unwrap();
        // the increments are affine in the accelerometer bias
        assert_relative_eq!(shifted.delta_v, base.delta_v + base.dv_dba * db, epsilon = 1e-12);
        assert_relative_eq!(shifted.delta_p, base.delta_p + base.dp_dba * db, epsilon = 1e-12);
        // and first-order accurate in the gyro bias
        let dg = Vector3::new(1e-4, -2e-4, 1e-4);
        let gs = preintegrate_imu(&s, 0.0, 0.02, &b, &dg, &n, 0.1).unwrap();
        let pred = base.delta_r * so3_exp(&(base.dr_dbg * dg));
        assert_relative_eq!(gs.delta_r, pred, epsilon = 1e-8);
        assert_relative_eq!(gs.delta_v, base.delta_v + base.dv_dbg * dg, epsilon = 1e-6);
    }

    #[test]
    fn covariance_is_symmetric_positive() {
        let s: Vec<_> = (0..4)
            .map(|k| sample(k as f64 * 0.005, Vector3::new(1.0, 0.0, 20.0), Vector3::new(0.0, 0.0, 9.81)))
            .collect();
        let p =
            preintegrate_imu(&s, 0.0, 0.02, &Vector3::zeros(), &Vector3::zeros(), &ImuNoise::default(), 0.1).unwrap();
        assert_relative_eq!(p.covariance, p.covariance.transpose(), epsilon = 1e-18);
        assert!(p.covariance.cholesky().is_some());
    }
}
