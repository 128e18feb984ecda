use nalgebra::{Quaternion, UnitQuaternion, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use super::{AllocationModel, QuadrotorParams};
use crate::error::{Error, Result};
use crate::math::gravity_vector;

/// Rigid-body state. `attitude` maps body vectors to the z-up world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidBodyState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub attitude: UnitQuaternion<f64>,
    /// Body rates ω^B (rad/s).
    pub body_rates: Vector3<f64>,
    pub time: f64,
}

impl RigidBodyState {
    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            attitude: UnitQuaternion::identity(),
            body_rates: Vector3::zeros(),
            time: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|x| x.is_finite())
            && self.velocity.iter().all(|x| x.is_finite())
            && self.attitude.coords.iter().all(|x| x.is_finite())
            && self.body_rates.iter().all(|x| x.is_finite())
    }
}

/// Per-rotor thrusts (N).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotorCommand {
    pub thrusts: Vector4<f64>,
    pub time: f64,
}

impl RotorCommand {
    pub fn new(thrusts: Vector4<f64>, time: f64) -> Self {
        Self { thrusts, time }
    }
}

/// Accelerations at a state: world-frame c.g. acceleration and ω̇^B.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub acceleration: Vector3<f64>,
    pub angular_acceleration: Vector3<f64>,
}

/// Gyroscopic moment of the spinning rotors on the body.
pub fn gyroscopic_moment(params: &QuadrotorParams, thrusts: &Vector4<f64>, body_rates: &Vector3<f64>) -> Vector3<f64> {
    if params.rotor_inertia == 0.0 {
        return Vector3::zeros();
    }
    // a rotor whose reaction torque on the body is +z spins about -z
    let mut h = 0.0;
    for i in 0..4 {
        let speed = (thrusts[i].max(0.0) / params.thrust_coefficient).sqrt();
        h -= params.spin_directions[i] * params.rotor_inertia * speed;
    }
    -body_rates.cross(&Vector3::new(0.0, 0.0, h))
}

fn accelerations(
    attitude: &UnitQuaternion<f64>,
    body_rates: &Vector3<f64>,
    thrusts: &Vector4<f64>,
    params: &QuadrotorParams,
    g_full: &nalgebra::Matrix4<f64>,
) -> StateDerivative {
    let wrench = g_full * thrusts;
    let inertia = params.inertia_vector();
    let thrust_world = attitude * Vector3::new(0.0, 0.0, wrench[0]);
    let acceleration = gravity_vector(params.gravity) + thrust_world / params.mass;

    let mut torque = Vector3::new(wrench[1], wrench[2], wrench[3]);
    torque.z -= params.yaw_damping * body_rates.z;
    torque += gyroscopic_moment(params, thrusts, body_rates);
    let iw = inertia.component_mul(body_rates);
    let angular_acceleration = (torque - body_rates.cross(&iw)).component_div(&inertia);
    StateDerivative { acceleration, angular_acceleration }
}

/// Derivative of the state at the given command, used by the IMU model.
pub fn state_derivative(
    state: &RigidBodyState,
    cmd: &RotorCommand,
    params: &QuadrotorParams,
    model: &AllocationModel,
) -> StateDerivative {
    accelerations(&state.attitude, &state.body_rates, &cmd.thrusts, params, &model.full)
}

#[derive(Clone, Copy)]
struct Flat {
    p: Vector3<f64>,
    v: Vector3<f64>,
    q: Quaternion<f64>,
    w: Vector3<f64>,
}

impl Flat {
    fn axpy(&self, h: f64, d: &Flat) -> Flat {
        Flat { p: self.p + d.p * h, v: self.v + d.v * h, q: self.q + d.q * h, w: self.w + d.w * h }
    }
}

/// Advances the state by one fixed RK4 step of length `dt` with the rotor
/// thrusts held constant. The quaternion is renormalized afterwards.
pub fn step_dynamics(
    state: &RigidBodyState,
    cmd: &RotorCommand,
    params: &QuadrotorParams,
    model: &AllocationModel,
    dt: f64,
) -> Result<RigidBodyState> {
    if !(dt > 0.0 && dt <= 0.01) {
        return Err(Error::Config(format!("dt = {dt} outside (0, 0.01]")));
    }
    let f = |s: &Flat| -> Flat {
        // the intermediate quaternion is not unit; normalize only for the rotation
        let uq = UnitQuaternion::new_normalize(s.q);
        let d = accelerations(&uq, &s.w, &cmd.thrusts, params, &model.full);
        let omega = Quaternion::new(0.0, s.w.x, s.w.y, s.w.z);
        Flat { p: s.v, v: d.acceleration, q: s.q * omega * 0.5, w: d.angular_acceleration }
    };
    let y0 = Flat { p: state.position, v: state.velocity, q: *state.attitude.quaternion(), w: state.body_rates };
    let k1 = f(&y0);
    let k2 = f(&y0.axpy(0.5 * dt, &k1));
    let k3 = f(&y0.axpy(0.5 * dt, &k2));
    let k4 = f(&y0.axpy(dt, &k3));
    let y1 = Flat {
        p: y0.p + (k1.p + k2.p * 2.0 + k3.p * 2.0 + k4.p) * (dt / 6.0),
        v: y0.v + (k1.v + k2.v * 2.0 + k3.v * 2.0 + k4.v) * (dt / 6.0),
        q: y0.q + (k1.q + k2.q * 2.0 + k3.q * 2.0 + k4.q) * (dt / 6.0),
        w: y0.w + (k1.w + k2.w * 2.0 + k3.w * 2.0 + k4.w) * (dt / 6.0),
    };
    let time = state.time + dt;
    let next = RigidBodyState {
        position: y1.p,
        velocity: y1.v,
        attitude: UnitQuaternion::new_normalize(y1.q),
        body_rates: y1.w,
        time,
    };
    if !next.is_finite() || !y1.q.norm().is_finite() {
        return Err(Error::NumericalDivergence { time });
    }
    Ok(next)
}
