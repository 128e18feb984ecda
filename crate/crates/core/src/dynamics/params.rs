use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::GRAVITY;

/// Physical parameters of the airframe.
///
/// Rotors are numbered 1..=4 counter-clockwise starting front-left when
/// seen from above; positions are derived from `arm_length` and
/// `rotor_azimuths_deg` (angle from body +x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadrotorParams {
    /// kg
    pub mass: f64,
    /// Principal inertia (kg·m²).
    pub inertia: [f64; 3],
    /// Gravity magnitude (m/s²).
    pub gravity: f64,
    /// Distance rotor hub to c.g. (m).
    pub arm_length: f64,
    pub rotor_azimuths_deg: [f64; 4],
    /// Rotor drag torque per unit thrust κ (m).
    pub torque_ratio: f64,
    /// Sign of the reaction yaw torque each rotor applies to the body.
    pub spin_directions: [f64; 4],
    /// Per-rotor thrust ceiling (N).
    pub max_thrust: f64,
    /// Rotor + propeller inertia about the spin axis (kg·m²). Zero disables
    /// the gyroscopic moment.
    pub rotor_inertia: f64,
    /// Thrust per squared rotor speed (N·s²/rad²), used to recover rotor speed.
    pub thrust_coefficient: f64,
    /// Linear aerodynamic damping of the body yaw rate (N·m·s/rad).
    pub yaw_damping: f64,
    /// Displacement from c.g. to the accelerometer, body frame (m).
    pub imu_lever_arm: [f64; 3],
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        Self {
            mass: 0.75,
            inertia: [0.0025, 0.0027, 0.0045],
            gravity: GRAVITY,
            arm_length: 0.15,
            rotor_azimuths_deg: [45.0, 135.0, 225.0, 315.0],
            torque_ratio: 0.016,
            spin_directions: [1.0, -1.0, 1.0, -1.0],
            max_thrust: 8.0,
            rotor_inertia: 6.0e-7,
            thrust_coefficient: 1.5e-6,
            yaw_damping: 0.0045,
            imu_lever_arm: [0.025, 0.0, 0.0],
        }
    }
}

impl QuadrotorParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.mass > 0.0) {
            return bad("mass must be positive");
        }
        if self.inertia.iter().any(|&i| !(i > 0.0)) {
            return bad("inertia entries must be positive");
        }
        if !(self.max_thrust > 0.0) {
            return bad("max_thrust must be positive");
        }
        if !(self.torque_ratio > 0.0) {
            return bad("torque_ratio must be positive");
        }
        if !(self.gravity > 0.0) {
            return bad("gravity must be a positive magnitude");
        }
        if self.spin_directions.iter().any(|s| s.abs() != 1.0) {
            return bad("spin directions must be ±1");
        }
        if self.rotor_inertia < 0.0 || self.yaw_damping < 0.0 || self.thrust_coefficient <= 0.0 {
            return bad("rotor inertia, yaw damping and thrust coefficient must be non-negative");
        }
        Ok(())
    }

    pub fn inertia_vector(&self) -> Vector3<f64> {
        Vector3::from(self.inertia)
    }

    pub fn lever_arm(&self) -> Vector3<f64> {
        Vector3::from(self.imu_lever_arm)
    }

    /// Rotor hub position in the body frame, `rotor` in 1..=4.
    pub fn rotor_position(&self, rotor: usize) -> Vector3<f64> {
        let az = self.rotor_azimuths_deg[rotor - 1].to_radians();
        Vector3::new(self.arm_length * az.cos(), self.arm_length * az.sin(), 0.0)
    }

    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }
}
