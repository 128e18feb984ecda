use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{RigidBodyState, StateDerivative};
use crate::error::{Error, Result};
use crate::math::gravity_vector;
use crate::rng::SimRng;

/// Accelerometer and gyro error model. Noise densities are continuous-time
/// (per √Hz); the per-sample standard deviation is `density · √rate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImuModel {
    /// Accelerometer position relative to the c.g., body frame (m).
    pub lever_arm: [f64; 3],
    pub accel_noise_density: f64,
    pub accel_bias: [f64; 3],
    pub gyro_noise_density: f64,
    pub gyro_bias: [f64; 3],
    pub rate_hz: f64,
    pub gravity: f64,
}

impl Default for ImuModel {
    fn default() -> Self {
        Self {
            lever_arm: [0.025, 0.0, 0.0],
            accel_noise_density: 0.004,
            accel_bias: [0.05, -0.03, 0.04],
            gyro_noise_density: 0.0005,
            gyro_bias: [0.003, -0.002, 0.001],
            rate_hz: 200.0,
            gravity: 9.81,
        }
    }
}

impl ImuModel {
    /// Same model with noise and bias switched off.
    pub fn noiseless(lever_arm: Vector3<f64>) -> Self {
        Self {
            lever_arm: lever_arm.into(),
            accel_noise_density: 0.0,
            accel_bias: [0.0; 3],
            gyro_noise_density: 0.0,
            gyro_bias: [0.0; 3],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate_hz > 0.0) {
            return Err(Error::Config("imu rate must be positive".into()));
        }
        if self.accel_noise_density < 0.0 || self.gyro_noise_density < 0.0 {
            return Err(Error::Config("imu noise densities must be non-negative".into()));
        }
        let finite = self.accel_bias.iter().chain(&self.gyro_bias).chain(&self.lever_arm);
        if !finite.into_iter().all(|b| b.is_finite()) {
            return Err(Error::Config("imu biases and lever arm must be finite".into()));
        }
        Ok(())
    }

    pub fn lever_arm(&self) -> Vector3<f64> {
        Vector3::from(self.lever_arm)
    }

    pub fn accel_sigma(&self) -> f64 {
        self.accel_noise_density * self.rate_hz.sqrt()
    }

    pub fn gyro_sigma(&self) -> f64 {
        self.gyro_noise_density * self.rate_hz.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub time: f64,
    pub gyro: Vector3<f64>,
    /// Specific force at the accelerometer, body axes (m/s²).
    pub accel: Vector3<f64>,
}

/// Noise-free specific force at the accelerometer:
/// `a^B − g^B + ω × (ω × d) + ω̇ × d`.
pub fn specific_force(
    truth: &RigidBodyState,
    deriv: &StateDerivative,
    lever_arm: &Vector3<f64>,
    gravity: f64,
) -> Vector3<f64> {
    let r_t = truth.attitude.inverse();
    let w = truth.body_rates;
    r_t * (deriv.acceleration - gravity_vector(gravity))
        + w.cross(&w.cross(lever_arm))
        + deriv.angular_acceleration.cross(lever_arm)
}

fn gaussian3(rng: &mut SimRng, sigma: f64) -> Vector3<f64> {
    if sigma == 0.0 {
        return Vector3::zeros();
    }
    Vector3::from_fn(|_, _| sigma * rng.sample::<f64, _>(StandardNormal))
}

/// One IMU sample at the truth state.
pub fn simulate_imu(truth: &RigidBodyState, deriv: &StateDerivative, model: &ImuModel, rng: &mut SimRng) -> ImuSample {
    let accel = specific_force(truth, deriv, &model.lever_arm(), model.gravity)
        + Vector3::from(model.accel_bias)
        + gaussian3(rng, model.accel_sigma());
    let gyro = truth.body_rates + Vector3::from(model.gyro_bias) + gaussian3(rng, model.gyro_sigma());
    ImuSample { time: truth.time, gyro, accel }
}
