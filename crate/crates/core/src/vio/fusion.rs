use nalgebra::{Matrix3, Matrix6, SMatrix, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::gravity_vector;
use crate::sensorsim::ImuSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// White acceleration noise driving the prediction (m/s²).
    pub accel_noise: f64,
    /// VIO position measurement noise (m).
    pub position_noise: f64,
    /// Time without a VIO update after which estimates are flagged.
    pub dropout_timeout: f64,
    pub gravity: f64,
    /// IMU position relative to the c.g., body axes.
    pub lever_arm: Vector3<f64>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            accel_noise: 0.5,
            position_noise: 0.01,
            dropout_timeout: 0.5,
            gravity: crate::math::GRAVITY,
            lever_arm: Vector3::zeros(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusedEstimate {
    pub time: f64,
    /// Center-of-gravity position and velocity.
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub degraded: bool,
}

/// Linear Kalman filter on c.g. position and velocity, predicted with the
/// IMU at its native rate and corrected by VIO positions.
#[derive(Debug, Clone)]
pub struct HighRateFusion {
    pub config: FusionConfig,
    pub accel_bias: Vector3<f64>,
    x: Vector6<f64>,
    cov: Matrix6<f64>,
    time: f64,
    last_update: f64,
}

impl HighRateFusion {
    pub fn new(config: FusionConfig, position: Vector3<f64>, velocity: Vector3<f64>, time: f64) -> Result<Self> {
        if !(config.accel_noise > 0.0 && config.position_noise > 0.0 && config.dropout_timeout > 0.0) {
            return Err(Error::Config("fusion noise levels and timeout must be positive".into()));
        }
        let mut x = Vector6::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&position);
        x.fixed_rows_mut::<3>(3).copy_from(&velocity);
        let cov = Matrix6::from_diagonal(&Vector6::new(1e-4, 1e-4, 1e-4, 1e-2, 1e-2, 1e-2));
        Ok(Self { config, accel_bias: Vector3::zeros(), x, cov, time, last_update: time })
    }

    /// World acceleration of the c.g. implied by one IMU sample.
    pub fn cg_acceleration(
        &self,
        imu: &ImuSample,
        attitude: &UnitQuaternion<f64>,
        omega_dot: &Vector3<f64>,
    ) -> Vector3<f64> {
        let w = imu.gyro;
        let d = self.config.lever_arm;
        let lever = w.cross(&w.cross(&d)) + omega_dot.cross(&d);
        attitude * (imu.accel - self.accel_bias - lever) + gravity_vector(self.config.gravity)
    }

    /// Constant-acceleration step over `dt`.
    pub fn predict(&mut self, imu: &ImuSample, attitude: &UnitQuaternion<f64>, omega_dot: &Vector3<f64>, dt: f64) {
        let a = self.cg_acceleration(imu, attitude, omega_dot);
        let p = self.x.fixed_rows::<3>(0).into_owned();
        let v = self.x.fixed_rows::<3>(3).into_owned();
        self.x.fixed_rows_mut::<3>(0).copy_from(&(p + v * dt + 0.5 * a * dt * dt));
        self.x.fixed_rows_mut::<3>(3).copy_from(&(v + a * dt));
        let mut f = Matrix6::identity();
        f.fixed_view_mut::<3, 3>(0, 3).copy_from(&(Matrix3::identity() * dt));
        let mut g = SMatrix::<f64, 6, 3>::zeros();
        g.fixed_view_mut::<3, 3>(0, 0).copy_from(&(Matrix3::identity() * 0.5 * dt * dt));
        g.fixed_view_mut::<3, 3>(3, 0).copy_from(&(Matrix3::identity() * dt));
        let q = self.config.accel_noise.powi(2) / dt.max(1e-9);
        self.cov = f * self.cov * f.transpose() + g * g.transpose() * q;
        self.time += dt;
    }

    pub fn update_position(&mut self, time: f64, position: &Vector3<f64>) {
        let h = SMatrix::<f64, 3, 6>::from_fn(|r, c| if r == c { 1.0 } else { 0.0 });
        let s = h * self.cov * h.transpose() + Matrix3::identity() * self.config.position_noise.powi(2);
        let Some(s_inv) = s.try_inverse() else { return };
        let k = self.cov * h.transpose() * s_inv;
        let innovation = position - self.x.fixed_rows::<3>(0);
        self.x += k * innovation;
        let ikh = Matrix6::identity() - k * h;
        let r = Matrix3::identity() * self.config.position_noise.powi(2);
        self.cov = ikh * self.cov * ikh.transpose() + k * r * k.transpose();
        self.last_update = time;
    }

    pub fn estimate(&self) -> FusedEstimate {
        FusedEstimate {
            time: self.time,
            position: self.x.fixed_rows::<3>(0).into_owned(),
            velocity: self.x.fixed_rows::<3>(3).into_owned(),
            degraded: self.time - self.last_update > self.config.dropout_timeout,
        }
    }

    pub fn covariance(&self) -> &Matrix6<f64> {
        &self.cov
    }
}

/// A VIO position fix for the c.g.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionFix {
    pub time: f64,
    pub position: Vector3<f64>,
}

/// Batch form: runs the filter over an IMU stream with per-sample attitude,
/// applying each fix at the first IMU sample at or after its timestamp.
pub fn fuse_highrate(
    imu: &[ImuSample],
    attitudes: &[UnitQuaternion<f64>],
    fixes: &[PositionFix],
    initial: (Vector3<f64>, Vector3<f64>),
    config: &FusionConfig,
) -> Result<Vec<FusedEstimate>> {
    if imu.len() != attitudes.len() {
        return Err(Error::Config(format!("{} IMU samples but {} attitudes", imu.len(), attitudes.len())));
    }
    let Some(first) = imu.first() else { return Ok(Vec::new()) };
    let mut filter = HighRateFusion::new(config.clone(), initial.0, initial.1, first.time)?;
    let mut next_fix = 0;
    let mut out = Vec::with_capacity(imu.len());
    for (i, s) in imu.iter().enumerate() {
        if i > 0 {
            let dt = s.time - imu[i - 1].time;
            filter.predict(&imu[i - 1], &attitudes[i - 1], &Vector3::zeros(), dt);
        }
        while next_fix < fixes.len() && fixes[next_fix].time <= s.time + 1e-9 {
            filter.update_position(s.time, &fixes[next_fix].position);
            next_fix += 1;
        }
        out.push(filter.estimate());
    }
    Ok(out)
}
