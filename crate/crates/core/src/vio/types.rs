use nalgebra::{Matrix3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::math::so3_exp;
use crate::sensorsim::CameraModel;

/// Estimated state of one window frame. Position and velocity refer to the
/// IMU, whose axes coincide with the body axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameState {
    pub index: u64,
    pub time: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub attitude: UnitQuaternion<f64>,
    pub accel_bias: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
}

/// Tangent-space size of a frame: `[δp, δv, δθ, δb_a, δb_g]`.
pub const FRAME_DOF: usize = 15;
pub const P: usize = 0;
pub const V: usize = 3;
pub const R: usize = 6;
pub const BA: usize = 9;
pub const BG: usize = 12;

impl FrameState {
    pub fn rotation(&self) -> Matrix3<f64> {
        self.attitude.to_rotation_matrix().into_inner()
    }

    /// `x ⊞ δ` with a right-multiplied rotation increment.
    pub fn retract(&self, delta: &[f64]) -> FrameState {
        let d = |o: usize| Vector3::new(delta[o], delta[o + 1], delta[o + 2]);
        let mut s = *self;
        s.position += d(P);
        s.velocity += d(V);
        s.attitude = UnitQuaternion::from_matrix(&(self.rotation() * so3_exp(&d(R))));
        s.accel_bias += d(BA);
        s.gyro_bias += d(BG);
        s
    }
}

/// A ground-plane landmark in the map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub id: u64,
    pub position: Vector3<f64>,
    pub observations: u32,
    pub triangulated: bool,
}

/// Camera intrinsics and extrinsics relative to the IMU.
#[derive(Debug, Clone, PartialEq)]
pub struct Rig {
    pub camera: CameraModel,
    /// Camera-to-body rotation.
    pub r_bc: Matrix3<f64>,
    /// Camera origin relative to the IMU, body axes.
    pub t_ic: Vector3<f64>,
    /// IMU position relative to the c.g., body axes.
    pub lever_arm: Vector3<f64>,
}

impl Rig {
    pub fn new(camera: CameraModel, lever_arm: Vector3<f64>) -> Self {
        let r_bc = camera.r_bc();
        let t_ic = camera.t_bc() - lever_arm;
        Self { camera, r_bc, t_ic, lever_arm }
    }

    pub fn camera_center(&self, f: &FrameState) -> Vector3<f64> {
        f.position + f.attitude * self.t_ic
    }

    /// World-to-camera rotation and camera center.
    pub fn camera_pose(&self, f: &FrameState) -> (Matrix3<f64>, Vector3<f64>) {
        ((f.rotation() * self.r_bc).transpose(), self.camera_center(f))
    }

    pub fn project(&self, f: &FrameState, landmark: &Vector3<f64>) -> Option<Vector2<f64>> {
        let (r, c) = self.camera_pose(f);
        self.camera.project(&r, &c, landmark)
    }

    /// Center-of-gravity position implied by an IMU-frame state.
    pub fn cg_position(&self, f: &FrameState) -> Vector3<f64> {
        f.position - f.attitude * self.lever_arm
    }

    /// IMU position for a c.g. position and attitude.
    pub fn imu_position(&self, cg: &Vector3<f64>, attitude: &UnitQuaternion<f64>) -> Vector3<f64> {
        cg + attitude * self.lever_arm
    }
}

/// Continuous-time IMU noise used for inertial weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImuNoise {
    pub accel_density: f64,
    pub gyro_density: f64,
    pub accel_random_walk: f64,
    pub gyro_random_walk: f64,
}

impl Default for ImuNoise {
    fn default() -> Self {
        Self { accel_density: 0.02, gyro_density: 0.002, accel_random_walk: 0.002, gyro_random_walk: 0.0002 }
    }
}

/// Weights of the window cost: pixel sigma for `W_v`, IMU noise for `W_i`
/// and the height weight `w_h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    pub pixel_sigma: f64,
    /// Huber threshold on whitened visual residuals.
    pub huber: f64,
    /// Height residual weight (m⁻²).
    pub height: f64,
    /// Pull of observed landmarks toward the `z = 0` ground plane, as a
    /// fraction of `height`. Without it absolute height is a gauge freedom.
    pub planarity: f64,
    pub imu: ImuNoise,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { pixel_sigma: 1.0, huber: 1.345, height: 400.0, planarity: 0.05, imu: ImuNoise::default() }
    }
}
