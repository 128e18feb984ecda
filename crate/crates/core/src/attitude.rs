//! Complementary attitude filter with spin-rotation correction, VIO yaw
//! fusion and lever-arm identification.
//!
//! In `Corrected` mode, and only while `|ω_z|` exceeds the spin threshold,
//! the accelerometer is stripped of the relaxed-hover c.g. acceleration
//! `â^B` and of the lever-arm terms before it is used as a gravity reference.
//! Below the threshold both modes are identical.

use nalgebra::{Matrix3, SymmetricEigen, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{skew, tilt_angle, wrap_angle};
use crate::sensorsim::ImuSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    Standard,
    #[default]
    Corrected,
}

impl FilterMode {
    pub fn other(self) -> Self {
        match self {
            FilterMode::Standard => FilterMode::Corrected,
            FilterMode::Corrected => FilterMode::Standard,
        }
    }
}

impl std::str::FromStr for FilterMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(FilterMode::Standard),
            "corrected" => Ok(FilterMode::Corrected),
            other => Err(Error::Config(format!("unknown filter mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComplementaryFilterConfig {
    /// Accelerometer correction gain (1/s).
    pub accel_gain: f64,
    /// Spin threshold ω̄ on `|ω_z|` (rad/s).
    pub spin_threshold: f64,
    pub lever_arm: [f64; 3],
    pub mode: FilterMode,
    /// Fraction of the VIO yaw innovation applied per update, in (0, 1].
    pub yaw_blend: f64,
    /// Cut-off of the low-pass on differentiated gyro (Hz).
    pub rate_lpf_hz: f64,
    pub gravity: f64,
}

impl Default for ComplementaryFilterConfig {
    fn default() -> Self {
        Self {
            accel_gain: 0.2,
            spin_threshold: 10.0,
            lever_arm: [0.025, 0.0, 0.0],
            mode: FilterMode::Corrected,
            yaw_blend: 0.2,
            rate_lpf_hz: 20.0,
            gravity: 9.81,
        }
    }
}

impl ComplementaryFilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.accel_gain >= 0.0) || !(self.spin_threshold > 0.0) || !(self.rate_lpf_hz > 0.0) {
            return Err(Error::Config("filter gains and thresholds must be positive".into()));
        }
        if !(self.yaw_blend > 0.0 && self.yaw_blend <= 1.0) {
            return Err(Error::Config("yaw blend must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttitudeEstimate {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub quaternion: UnitQuaternion<f64>,
    /// `arccos(cos θ cos φ)`.
    pub tilt: f64,
    pub time: f64,
}

impl AttitudeEstimate {
    pub fn from_quaternion(q: UnitQuaternion<f64>, time: f64) -> Self {
        let (roll, pitch, yaw) = q.euler_angles();
        Self { roll, pitch, yaw, quaternion: q, tilt: tilt_angle(roll, pitch), time }
    }
}

/// Body-frame c.g. acceleration during relaxed hover,
/// `[−ω_x g/‖ω‖, −ω_y g/‖ω‖, g tan α sin α]`, or zero below the threshold.
pub fn relaxed_hover_accel(
    body_rates: &Vector3<f64>,
    roll: f64,
    pitch: f64,
    gravity: f64,
    threshold: f64,
) -> Vector3<f64> {
    let norm = body_rates.norm();
    if body_rates.z.abs() < threshold || norm == 0.0 {
        return Vector3::zeros();
    }
    let alpha = tilt_angle(roll, pitch);
    Vector3::new(-body_rates.x * gravity / norm, -body_rates.y * gravity / norm, gravity * alpha.tan() * alpha.sin())
}

/// Accelerometer vector used as the gravity reference (an estimate of `−g^B`).
pub fn corrected_accel(
    imu: &ImuSample,
    omega_dot: &Vector3<f64>,
    prev: &AttitudeEstimate,
    cfg: &ComplementaryFilterConfig,
) -> Vector3<f64> {
    let w = imu.gyro;
    if cfg.mode == FilterMode::Standard || w.z.abs() < cfg.spin_threshold {
        return imu.accel;
    }
    let d = Vector3::from(cfg.lever_arm);
    let lever = w.cross(&w.cross(&d)) + omega_dot.cross(&d);
    imu.accel - lever - relaxed_hover_accel(&w, prev.roll, prev.pitch, cfg.gravity, cfg.spin_threshold)
}

/// One filter step: gyro propagation, tilt correction toward the gravity
/// reference, and an optional yaw pull toward `yaw_from_vio`.
pub fn cf_update(
    prev: &AttitudeEstimate,
    imu: &ImuSample,
    dt: f64,
    cfg: &ComplementaryFilterConfig,
    omega_dot: &Vector3<f64>,
    yaw_from_vio: Option<f64>,
) -> AttitudeEstimate {
    let q = prev.quaternion;
    let mut rate = imu.gyro;
    let meas = corrected_accel(imu, omega_dot, prev, cfg);
    if meas.norm() >= 0.2 * cfg.gravity && cfg.accel_gain > 0.0 {
        let u_meas = meas.normalize();
        let u_est = q.inverse() * Vector3::z();
        rate += cfg.accel_gain * u_meas.cross(&u_est);
    }
    let mut q = q * UnitQuaternion::from_scaled_axis(rate * dt);
    if let Some(yaw) = yaw_from_vio {
        let (_, _, current) = q.euler_angles();
        let step = cfg.yaw_blend * wrap_angle(yaw - current);
        q = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), step) * q;
    }
    AttitudeEstimate::from_quaternion(q, imu.time)
}

/// Stateful filter that also differentiates and low-passes the gyro.
#[derive(Debug, Clone)]
pub struct ComplementaryFilter {
    pub cfg: ComplementaryFilterConfig,
    estimate: AttitudeEstimate,
    last_gyro: Option<(f64, Vector3<f64>)>,
    omega_dot: Vector3<f64>,
}

impl ComplementaryFilter {
    pub fn new(cfg: ComplementaryFilterConfig, initial: AttitudeEstimate) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, estimate: initial, last_gyro: None, omega_dot: Vector3::zeros() })
    }

    pub fn estimate(&self) -> AttitudeEstimate {
        self.estimate
    }

    pub fn omega_dot(&self) -> Vector3<f64> {
        self.omega_dot
    }

    pub fn update(&mut self, imu: &ImuSample, yaw_from_vio: Option<f64>) -> AttitudeEstimate {
        let dt = match self.last_gyro {
            Some((t, w)) if imu.time > t => {
                let dt = imu.time - t;
                let tau = 1.0 / (2.0 * std::f64::consts::PI * self.cfg.rate_lpf_hz);
                let a = dt / (dt + tau);
                self.omega_dot += a * ((imu.gyro - w) / dt - self.omega_dot);
                dt
            }
            _ => 0.0,
        };
        self.last_gyro = Some((imu.time, imu.gyro));
        if dt > 0.0 {
            self.estimate = cf_update(&self.estimate, imu, dt, &self.cfg, &self.omega_dot, yaw_from_vio);
        }
        self.estimate
    }
}

/// One regression row for lever-arm identification. `gravity_body` is `g^B`
/// (pointing down) and `accel_body` the c.g. acceleration `a^B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeverArmSample {
    pub accel: Vector3<f64>,
    pub body_rates: Vector3<f64>,
    pub angular_accel: Vector3<f64>,
    pub accel_body: Vector3<f64>,
    pub gravity_body: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeverArmEstimate {
    pub lever_arm: Vector3<f64>,
    pub residual_rms: f64,
    /// Ratio of extreme singular values of the stacked regressor.
    pub condition: f64,
    pub rank: usize,
    /// Unit directions along which the data carries no information.
    pub unobservable: Vec<Vector3<f64>>,
    /// One-sigma standard errors (zero along unobservable directions).
    pub std_errors: Vector3<f64>,
}

/// Least squares for `d` in `a_IMU − a^B + g^B = ([ω]×² + [ω̇]×) d`.
pub fn estimate_lever_arm(samples: &[LeverArmSample]) -> Result<LeverArmEstimate> {
    if samples.is_empty() {
        return Err(Error::UnderConstrained("no lever-arm samples".into()));
    }
    let rows = |s: &LeverArmSample| {
        let w = skew(&s.body_rates);
        (w * w + skew(&s.angular_accel), s.accel - s.accel_body + s.gravity_body)
    };
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for s in samples {
        let (a, b) = rows(s);
        ata += a.transpose() * a;
        atb += a.transpose() * b;
    }
    let eig = SymmetricEigen::new(ata);
    let max = eig.eigenvalues.max();
    let tol = max * 1e-12;
    let mut pinv = Matrix3::zeros();
    let mut unobservable = Vec::new();
    let mut rank = 0;
    for i in 0..3 {
        let v = eig.eigenvectors.column(i).into_owned();
        if eig.eigenvalues[i] > tol && max > 0.0 {
            pinv += v * v.transpose() / eig.eigenvalues[i];
            rank += 1;
        } else {
            unobservable.push(v);
        }
    }
    let lever_arm = pinv * atb;
    let rss: f64 = samples
        .iter()
        .map(|s| {
            let (a, b) = rows(s);
            (a * lever_arm - b).norm_squared()
        })
        .sum();
    let n = 3 * samples.len();
    let residual_rms = (rss / n as f64).sqrt();
    let dof = n.saturating_sub(rank).max(1) as f64;
    let cov = pinv * (rss / dof);
    let min = eig.eigenvalues.min().max(0.0);
    Ok(LeverArmEstimate {
        lever_arm,
        residual_rms,
        condition: if min > 0.0 { (max / min).sqrt() } else { f64::INFINITY },
        rank,
        unobservable,
        std_errors: cov.diagonal().map(|v| v.max(0.0).sqrt()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    const G: f64 = 9.81;

    fn imu(t: f64, gyro: Vector3<f64>, accel: Vector3<f64>) -> ImuSample {
        ImuSample { time: t, gyro, accel }
    }

    #[test]
    fn relaxed_hover_accel_examples() {
        assert_eq!(relaxed_hover_accel(&Vector3::new(0.0, 0.0, 20.0), 0.0, 0.0, G, 10.0), Vector3::zeros());
        let a = relaxed_hover_accel(&Vector3::new(2.0, 0.0, 20.0), 0.0, 0.0, G, 10.0);
        assert_relative_eq!(a.x, -(2.0 / 404f64.sqrt()) * G, epsilon = 1e-12);
        assert_relative_eq!(a.x, -0.976, epsilon = 1e-3);
        let slow = relaxed_hover_accel(&Vector3::new(3.0, -1.0, 5.0), 0.4, 0.3, G, 10.0);
        assert_eq!(slow, Vector3::zeros());
    }

    #[test]
    fn converges_to_level_with_gain_time_constant() {
        let cfg = ComplementaryFilterConfig { mode: FilterMode::Standard, ..Default::default() };
        let q0 = UnitQuaternion::from_euler_angles(10f64.to_radians(), 0.0, 0.0);
        let mut f = ComplementaryFilter::new(cfg.clone(), AttitudeEstimate::from_quaternion(q0, 0.0)).unwrap();
        let dt = 0.005;
        let tau = 1.0 / cfg.accel_gain;
        let mut est = f.estimate();
        for k in 0..=((tau / dt).round() as usize) {
            est = f.update(&imu(k as f64 * dt, Vector3::zeros(), Vector3::new(0.0, 0.0, G)), None);
        }
        // small-angle first-order decay: e(τ) ≈ e(0)/e
        let expected = 10.0 * (-1f64).exp();
        assert_relative_eq!(est.roll.to_degrees(), expected, max_relative = 0.05);
    }

    #[test]
    fn zero_gain_is_pure_gyro_integration() {
        let cfg = ComplementaryFilterConfig { accel_gain: 0.0, ..Default::default() };
        let q0 = UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3);
        let prev = AttitudeEstimate::from_quaternion(q0, 0.0);
        let w = Vector3::new(0.3, -1.0, 2.0);
        let out = cf_update(&prev, &imu(0.005, w, Vector3::new(1.0, 2.0, 3.0)), 0.005, &cfg, &Vector3::zeros(), None);
        let expected = q0 * UnitQuaternion::from_scaled_axis(w * 0.005);
        assert_relative_eq!(out.quaternion, expected, epsilon = 1e-14);
    }

    /// Noise-free relaxed hover: spin axis `up` (body), tilt of body z from up.
    fn relaxed_hover_imu(up: Vector3<f64>, rate: f64, d: Vector3<f64>) -> (ImuSample, Vector3<f64>) {
        let w = up * rate;
        let cos_a = up.z;
        let a_body = Vector3::z() * (G / cos_a) - up * G;
        let g_body = -up * G;
        let accel = a_body - g_body + w.cross(&w.cross(&d));
        (imu(0.0, w, accel), a_body)
    }

    #[test]
    fn corrected_measurement_is_exactly_gravity_at_relaxed_hover() {
        let up = Vector3::new(-0.3, 0.2, 0.9).normalize();
        let d = Vector3::new(0.025, 0.0, 0.0);
        let (s, _) = relaxed_hover_imu(up, 20.0, d);
        let q = crate::math::attitude_from_up_body(&up, 0.4);
        let prev = AttitudeEstimate::from_quaternion(q, 0.0);
        let cfg = ComplementaryFilterConfig { lever_arm: d.into(), ..Default::default() };
        let m = corrected_accel(&s, &Vector3::zeros(), &prev, &cfg);
        assert_relative_eq!(m, up * G, epsilon = 1e-9);
        // the filter then sits still at the truth
        let next = cf_update(&prev, &s, 0.005, &cfg, &Vector3::zeros(), None);
        let up_next = next.quaternion.inverse() * Vector3::z();
        let up_prop = (q * UnitQuaternion::from_scaled_axis(s.gyro * 0.005)).inverse() * Vector3::z();
        assert_relative_eq!(up_next, up_prop, epsilon = 1e-12);
        // standard mode sees the lever-arm and c.g. terms as a tilt
        let std_cfg = ComplementaryFilterConfig { mode: FilterMode::Standard, ..cfg };
        let raw = corrected_accel(&s, &Vector3::zeros(), &prev, &std_cfg);
        assert!(raw.normalize().dot(&up).acos().to_degrees() > 20.0);
    }

    proptest! {
        #[test]
        fn modes_identical_below_threshold(
            w in proptest::array::uniform3(-9.9f64..9.9),
            a in proptest::array::uniform3(-15.0f64..15.0),
            rpy in proptest::array::uniform3(-0.5f64..0.5),
        ) {
            let q = UnitQuaternion::from_euler_angles(rpy[0], rpy[1], rpy[2]);
            let prev = AttitudeEstimate::from_quaternion(q, 0.0);
            let s = imu(0.005, Vector3::from(w), Vector3::from(a));
            let c = ComplementaryFilterConfig::default();
            let st = ComplementaryFilterConfig { mode: FilterMode::Standard, ..c.clone() };
            let od = Vector3::new(1.0, -2.0, 0.5);
            let x = cf_update(&prev, &s, 0.005, &c, &od, Some(0.2));
            let y = cf_update(&prev, &s, 0.005, &st, &od, Some(0.2));
            prop_assert_eq!(x, y);
        }
    }

    #[test]
    fn vio_yaw_bounds_gyro_drift() {
        let cfg = ComplementaryFilterConfig::default();
        let bias = Vector3::new(0.0, 0.0, 0.01);
        let mut fused =
            ComplementaryFilter::new(cfg.clone(), AttitudeEstimate::from_quaternion(UnitQuaternion::identity(), 0.0))
                .unwrap();
        let mut free = fused.clone();
        let dt = 0.005;
        let mut worst = 0.0f64;
        for k in 1..=12_000 {
            let s = imu(k as f64 * dt, bias, Vector3::new(0.0, 0.0, G));
            let vio = (k % 4 == 0).then_some(0.0);
            worst = worst.max(fused.update(&s, vio).yaw.abs());
            free.update(&s, None);
        }
        assert!(worst < 0.01, "fused yaw error {worst}");
        // the first sample only primes the filter
        assert_relative_eq!(free.estimate().yaw, 0.01 * 11_999.0 * dt, epsilon = 1e-9);
    }

    fn lever_log(d: Vector3<f64>, n: usize, noise: f64, seed: u64) -> Vec<LeverArmSample> {
        let mut rng = stream(seed, 0);
        let mut u = |s: f64| s * (rng.random::<f64>() * 2.0 - 1.0);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let w = Vector3::new(u(6.0), u(6.0), 12.0 + u(10.0));
            let wd = Vector3::new(u(30.0), u(30.0), u(10.0));
            let a_body = Vector3::new(u(3.0), u(3.0), u(3.0));
            let g_body = Vector3::new(u(3.0), u(3.0), -9.0);
            let accel = a_body - g_body + w.cross(&w.cross(&d)) + wd.cross(&d);
            out.push(LeverArmSample {
                accel,
                body_rates: w,
                angular_accel: wd,
                accel_body: a_body,
                gravity_body: g_body,
            });
        }
        if noise > 0.0 {
            let mut rng = stream(seed, 1);
            for s in &mut out {
                s.accel += Vector3::from_fn(|_, _| noise * rng.sample::<f64, _>(StandardNormal));
            }
        }
        out
    }

    #[test]
    fn lever_arm_recovered_exactly() {
        let d = Vector3::new(0.03, 0.0, 0.01);
        let est = estimate_lever_arm(&lever_log(d, 200, 0.0, 1)).unwrap();
        assert_relative_eq!(est.lever_arm, d, epsilon = 1e-9);
        assert_eq!(est.rank, 3);
        assert!(est.unobservable.is_empty());
        let zero = estimate_lever_arm(&lever_log(Vector3::zeros(), 200, 0.0, 2)).unwrap();
        assert!(zero.lever_arm.norm() < 1e-12);
    }

    #[test]
    fn lever_arm_within_three_standard_errors() {
        let d = Vector3::new(0.025, -0.01, 0.005);
        let mut inside = 0;
        let seeds = 20;
        for seed in 0..seeds {
            let est = estimate_lever_arm(&lever_log(d, 10_000, 0.1, 100 + seed)).unwrap();
            let ok = (0..3).all(|k| (est.lever_arm[k] - d[k]).abs() < 3.0 * est.std_errors[k]);
            inside += ok as usize;
            assert_relative_eq!(est.residual_rms, 0.1, max_relative = 0.05);
        }
        assert!(inside >= seeds as usize - 1, "{inside}/{seeds}");
    }

    #[test]
    fn constant_yaw_spin_leaves_z_unobservable() {
        let d = Vector3::new(0.02, 0.01, 0.05);
        let samples: Vec<_> = (0..50)
            .map(|_| {
                let w = Vector3::new(0.0, 0.0, 20.0);
                let accel = Vector3::new(0.0, 0.0, 9.81) + w.cross(&w.cross(&d));
                LeverArmSample {
                    accel,
                    body_rates: w,
                    angular_accel: Vector3::zeros(),
                    accel_body: Vector3::zeros(),
                    gravity_body: Vector3::new(0.0, 0.0, -9.81),
                }
            })
            .collect();
        let est = estimate_lever_arm(&samples).unwrap();
        assert_eq!(est.rank, 2);
        assert_eq!(est.unobservable.len(), 1);
        assert_relative_eq!(est.unobservable[0].z.abs(), 1.0, epsilon = 1e-9);
        assert_relative_eq!(est.lever_arm.xy(), d.xy(), epsilon = 1e-9);
        assert!(est.condition.is_infinite());
    }
}
