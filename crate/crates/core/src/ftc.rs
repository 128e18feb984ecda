//! Fault-tolerant flight controller.
//!
//! Pipeline per control tick: PD position loop → desired thrust direction
//! `n` → reduced-attitude NDI torques → collective thrust → allocation over
//! the remaining rotors. Before a failure the same reduced-attitude law runs
//! with `n_fix = e_z`, plus a yaw-rate loop, on the full 4×4 allocation.

use nalgebra::{Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::dynamics::{embed_reduced, AllocationModel, QuadrotorParams, RigidBodyState, RotorCommand};
use crate::error::{Error, Result};
use crate::math::gravity_vector;

/// Which printed form of the reduced-attitude torque law to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NdiVariant {
    /// Term-for-term as printed, including `(n_y ω_z − n_z ω_x)` in the roll row.
    AsPrinted,
    /// As printed but with the rate cross terms made symmetric with the
    /// derivative terms (`ω_y` in the roll row, `ω_x` in the pitch row).
    Symmetric,
    /// Re-derived from the reduced-attitude kinematics `ṅ^B = n^B × ω^B` and
    /// `ÿ = −k_p y − k_d ẏ`. Differs from `Symmetric` in the sign of the
    /// proportional term and uses the exact Euler coupling `(I_z − I_y)`.
    #[default]
    Derived,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerGains {
    pub position_kp: [f64; 3],
    pub position_kd: [f64; 3],
    /// Reduced-attitude proportional gain (1/s²).
    pub attitude_kp: f64,
    /// Reduced-attitude derivative gain (1/s).
    pub attitude_kd: f64,
    pub attitude_ki: f64,
    /// Angle between `n_fix` and body z (deg).
    pub n_fix_tilt_deg: f64,
    /// Azimuth of the `n_fix` tilt in the body x–y plane (deg). `None`
    /// selects the ±x half-plane holding the rotor opposite the failed one.
    pub n_fix_azimuth_deg: Option<f64>,
    pub max_lateral_accel: f64,
    pub max_vertical_accel: f64,
    /// Yaw-rate loop gain while all four rotors work (1/s).
    pub yaw_rate_gain: f64,
    pub ndi_variant: NdiVariant,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            position_kp: [2.0, 2.0, 3.0],
            position_kd: [2.5, 2.5, 3.0],
            attitude_kp: 100.0,
            attitude_kd: 20.0,
            attitude_ki: 0.0,
            n_fix_tilt_deg: 15.0,
            n_fix_azimuth_deg: None,
            max_lateral_accel: 5.0,
            max_vertical_accel: 3.0,
            yaw_rate_gain: 5.0,
            ndi_variant: NdiVariant::Derived,
        }
    }
}

impl ControllerGains {
    pub fn validate(&self) -> Result<()> {
        if !(self.attitude_kp > 0.0 && self.attitude_kd > 0.0) {
            return Err(Error::Config("attitude gains must be positive".into()));
        }
        if self.attitude_ki < 0.0 {
            return Err(Error::Config("attitude_ki must be non-negative".into()));
        }
        if !(0.0..80.0).contains(&self.n_fix_tilt_deg) {
            return Err(Error::Config("n_fix_tilt_deg must lie in [0, 80)".into()));
        }
        Ok(())
    }

    /// Body-fixed vector the desired thrust direction is aligned with.
    pub fn n_fix(&self, params: &QuadrotorParams, failed_rotor: Option<usize>) -> Vector3<f64> {
        let Some(rotor) = failed_rotor else {
            return Vector3::z();
        };
        let azimuth = match self.n_fix_azimuth_deg {
            Some(a) => a.to_radians(),
            None => {
                let opposite = (rotor + 1) % 4 + 1;
                if params.rotor_position(opposite).x >= 0.0 {
                    0.0
                } else {
                    std::f64::consts::PI
                }
            }
        };
        let tilt = self.n_fix_tilt_deg.to_radians();
        Vector3::new(tilt.sin() * azimuth.cos(), tilt.sin() * azimuth.sin(), tilt.cos())
    }
}

/// Desired direction and its body-frame image with the NDI output `y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedAttitudeState {
    pub n_world: Vector3<f64>,
    pub n_body: Vector3<f64>,
    pub y: Vector2<f64>,
}

impl ReducedAttitudeState {
    pub fn new(n_world: Vector3<f64>, estimate: &RigidBodyState, n_fix: &Vector3<f64>) -> Self {
        let n_body = estimate.attitude.inverse_transform_vector(&n_world);
        let y = Vector2::new(n_body.x - n_fix.x, n_body.y - n_fix.y);
        Self { n_world, n_body, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub thrust: f64,
    pub tau_x: f64,
    pub tau_y: f64,
    /// Yaw torque; always zero after a failure.
    pub tau_z: f64,
    /// Thrusts of the three remaining rotors before clamping.
    pub reduced_thrusts: Option<Vector3<f64>>,
    pub command: RotorCommand,
    pub clamped: [bool; 4],
}

/// PD position loop with separate lateral and vertical saturation.
pub fn position_control(
    position: &Vector3<f64>,
    velocity: &Vector3<f64>,
    setpoint: &Vector3<f64>,
    gains: &ControllerGains,
) -> Vector3<f64> {
    let kp = Vector3::from(gains.position_kp);
    let kd = Vector3::from(gains.position_kd);
    let mut a = kp.component_mul(&(setpoint - position)) - kd.component_mul(velocity);
    let lateral = (a.x * a.x + a.y * a.y).sqrt();
    if lateral > gains.max_lateral_accel {
        let s = gains.max_lateral_accel / lateral;
        a.x *= s;
        a.y *= s;
    }
    a.z = a.z.clamp(-gains.max_vertical_accel, gains.max_vertical_accel);
    a
}

/// `n = (a_des − g) / ‖a_des − g‖` with `g = (0, 0, −g)`.
pub fn desired_direction(a_des: &Vector3<f64>, gravity: f64) -> Result<Vector3<f64>> {
    let v = a_des - gravity_vector(gravity);
    let norm = v.norm();
    if !(norm > 1e-6) {
        return Err(Error::DegenerateDirection { norm });
    }
    Ok(v / norm)
}

/// Roll and pitch torque commands from the reduced-attitude NDI law.
///
/// `y_integral` is the running integral of `y`; it enters wherever `k_p y` does.
#[allow(clippy::too_many_arguments)]
pub fn ndi_attitude_control(
    n_body: &Vector3<f64>,
    body_rates: &Vector3<f64>,
    n_fix: &Vector3<f64>,
    kp: f64,
    kd: f64,
    ki: f64,
    y_integral: &Vector2<f64>,
    inertia: &Vector3<f64>,
    variant: NdiVariant,
) -> Result<(f64, f64)> {
    let (nx, ny, nz) = (n_body.x, n_body.y, n_body.z);
    if nz.abs() <= 0.2 {
        return Err(Error::AttitudeSingular { n_z: nz });
    }
    let (wx, wy, wz) = (body_rates.x, body_rates.y, body_rates.z);
    let (ix, iy, iz) = (inertia.x, inertia.y, inertia.z);
    let p1 = kp * (nx - n_fix.x) + ki * y_integral.x;
    let p2 = kp * (ny - n_fix.y) + ki * y_integral.y;

    let (tau_x, tau_y) = match variant {
        NdiVariant::AsPrinted => (
            (p2 + kd * (nx * wz - nz * wx) + (ny * wz - nz * wx) * wz) * ix / nz + iz * wy * wz - ix * wy * wz,
            -(p1 + kd * (nz * wy - ny * wz) + (nx * wz - nz * wy) * wz) * iy / nz + ix * wx * wz - iz * wx * wz,
        ),
        NdiVariant::Symmetric => (
            (p2 + kd * (nx * wz - nz * wx) + (ny * wz - nz * wy) * wz) * ix / nz + iz * wy * wz - ix * wy * wz,
            -(p1 + kd * (nz * wy - ny * wz) + (nx * wz - nz * wx) * wz) * iy / nz + ix * wx * wz - iz * wx * wz,
        ),
        NdiVariant::Derived => {
            // keeps the d(n_z)/dt terms the printed law drops for small ω_x, ω_y
            let nz_dot = nx * wy - ny * wx;
            (
                (-p2 + kd * (nx * wz - nz * wx) + (ny * wz - nz * wy) * wz - nz_dot * wx) * ix / nz
                    + (iz - iy) * wy * wz,
                -(-p1 + kd * (nz * wy - ny * wz) + (nx * wz - nz * wx) * wz + nz_dot * wy) * iy / nz
                    + (ix - iz) * wx * wz,
            )
        }
    };
    Ok((tau_x, tau_y))
}

/// Collective thrust `m (a_z + g) / (cos φ cos θ)`, clamped to `[0, 3 m g]`.
pub fn thrust_control(a_z_des: f64, roll: f64, pitch: f64, params: &QuadrotorParams) -> Result<f64> {
    let limit = 3.0 * params.mass * params.gravity;
    let cos_tilt = roll.cos() * pitch.cos();
    let raw = params.mass * (a_z_des + params.gravity);
    if cos_tilt <= 0.2 {
        let clamped_thrust = (raw / 0.2).clamp(0.0, limit);
        return Err(Error::ThrustSingular { cos_tilt, clamped_thrust });
    }
    Ok((raw / cos_tilt).clamp(0.0, limit))
}

fn clamp_thrusts(u: &Vector4<f64>, max_thrust: f64) -> (Vector4<f64>, [bool; 4]) {
    let mut out = *u;
    let mut flags = [false; 4];
    for i in 0..4 {
        if out[i] < 0.0 || out[i] > max_thrust || out[i].is_nan() {
            flags[i] = true;
            out[i] = if out[i] > max_thrust { max_thrust } else { 0.0 };
        }
    }
    (out, flags)
}

/// `ũ = G̃⁻¹ [T, τx, τy]ᵀ`, embedded with the failed rotor at zero and
/// clamped per rotor to `[0, u_max]`.
pub fn allocate(
    thrust: f64,
    tau_x: f64,
    tau_y: f64,
    model: &AllocationModel,
    params: &QuadrotorParams,
    time: f64,
) -> Result<ControlOutput> {
    let reduced =
        model.reduced.as_ref().ok_or_else(|| Error::Config("allocate requires a failed rotor in the model".into()))?;
    let ut = reduced.inverse * Vector3::new(thrust, tau_x, tau_y);
    let full = embed_reduced(&ut, reduced.failed_rotor);
    let (u, clamped) = clamp_thrusts(&full, params.max_thrust);
    Ok(ControlOutput {
        thrust,
        tau_x,
        tau_y,
        tau_z: 0.0,
        reduced_thrusts: Some(ut),
        command: RotorCommand::new(u, time),
        clamped,
    })
}

/// Four-rotor allocation through the full inverse.
pub fn allocate_full(
    wrench: &Vector4<f64>,
    model: &AllocationModel,
    params: &QuadrotorParams,
    time: f64,
) -> ControlOutput {
    let u = model.full_inverse * wrench;
    let (u, clamped) = clamp_thrusts(&u, params.max_thrust);
    ControlOutput {
        thrust: wrench[0],
        tau_x: wrench[1],
        tau_y: wrench[2],
        tau_z: wrench[3],
        reduced_thrusts: None,
        command: RotorCommand::new(u, time),
        clamped,
    }
}

/// Diagnostics raised during one controller update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ControlFlags {
    pub degenerate_direction: bool,
    pub attitude_singular: bool,
    pub thrust_singular: bool,
}

/// One controller tick worth of outputs plus internals for the trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerStep {
    pub output: ControlOutput,
    pub attitude: ReducedAttitudeState,
    pub a_des: Vector3<f64>,
    pub flags: ControlFlags,
}

/// Stateful wrapper holding the optional integral and the fall-back values.
#[derive(Debug, Clone)]
pub struct FaultTolerantController {
    pub gains: ControllerGains,
    params: QuadrotorParams,
    model: AllocationModel,
    n_fix: Vector3<f64>,
    y_integral: Vector2<f64>,
    last_direction: Vector3<f64>,
    last_torque: (f64, f64),
}

impl FaultTolerantController {
    pub fn new(gains: ControllerGains, params: QuadrotorParams, model: AllocationModel) -> Result<Self> {
        gains.validate()?;
        let n_fix = gains.n_fix(&params, model.failed_rotor());
        Ok(Self {
            gains,
            params,
            model,
            n_fix,
            y_integral: Vector2::zeros(),
            last_direction: Vector3::z(),
            last_torque: (0.0, 0.0),
        })
    }

    /// Switches to the reduced allocation after a rotor failure.
    pub fn set_failure(&mut self, rotor: usize) -> Result<()> {
        self.model = self.model.reduce(rotor)?;
        self.n_fix = self.gains.n_fix(&self.params, Some(rotor));
        self.y_integral = Vector2::zeros();
        Ok(())
    }

    pub fn n_fix(&self) -> Vector3<f64> {
        self.n_fix
    }

    pub fn model(&self) -> &AllocationModel {
        &self.model
    }

    /// Runs one control update on the state estimate. `dt` is the control
    /// period (for the integral), `yaw_rate_ref` only matters with four rotors.
    pub fn update(
        &mut self,
        estimate: &RigidBodyState,
        setpoint: &Vector3<f64>,
        yaw_rate_ref: f64,
        dt: f64,
    ) -> ControllerStep {
        let mut flags = ControlFlags::default();
        let a_des = position_control(&estimate.position, &estimate.velocity, setpoint, &self.gains);
        let n = match desired_direction(&a_des, self.params.gravity) {
            Ok(n) => {
                self.last_direction = n;
                n
            }
            Err(_) => {
                flags.degenerate_direction = true;
                self.last_direction
            }
        };
        let att = ReducedAttitudeState::new(n, estimate, &self.n_fix);
        if self.gains.attitude_ki > 0.0 {
            self.y_integral += att.y * dt;
        }
        let inertia = self.params.inertia_vector();
        let (tau_x, tau_y) = match ndi_attitude_control(
            &att.n_body,
            &estimate.body_rates,
            &self.n_fix,
            self.gains.attitude_kp,
            self.gains.attitude_kd,
            self.gains.attitude_ki,
            &self.y_integral,
            &inertia,
            self.gains.ndi_variant,
        ) {
            Ok(t) => {
                self.last_torque = t;
                t
            }
            Err(_) => {
                flags.attitude_singular = true;
                self.last_torque
            }
        };
        let (roll, pitch, _) = estimate.attitude.euler_angles();
        let thrust = match thrust_control(a_des.z, roll, pitch, &self.params) {
            Ok(t) => t,
            Err(Error::ThrustSingular { clamped_thrust, .. }) => {
                flags.thrust_singular = true;
                clamped_thrust
            }
            Err(_) => unreachable!("thrust_control only raises ThrustSingular"),
        };
        let output = if self.model.reduced.is_some() {
            allocate(thrust, tau_x, tau_y, &self.model, &self.params, estimate.time).expect("reduced model present")
        } else {
            let tau_z = inertia.z * self.gains.yaw_rate_gain * (yaw_rate_ref - estimate.body_rates.z);
            allocate_full(&Vector4::new(thrust, tau_x, tau_y, tau_z), &self.model, &self.params, estimate.time)
        };
        ControllerStep { output, attitude: att, a_des, flags }
    }
}
