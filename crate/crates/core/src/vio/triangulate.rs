use nalgebra::Vector3;

use super::types::{FrameState, Landmark, Rig};
use crate::error::{Error, Result};
use crate::sensorsim::FeatureObservation;

/// Rays closer than this to horizontal (80° from nadir) are rejected.
const MIN_DOWN_COMPONENT: f64 = 0.173_648_177_666_930_35;

/// Intersects the observation ray with the plane `z = p_c,z − ĥ`.
pub fn triangulate_range(obs: &FeatureObservation, frame: &FrameState, height: f64, rig: &Rig) -> Result<Landmark> {
    if !(height > 0.0) {
        return Err(Error::Config(format!("height {height} must be positive")));
    }
    let (r_ci, center) = rig.camera_pose(frame);
    let ray = r_ci.transpose() * rig.camera.backproject(&obs.pixel);
    let down = -ray.z / ray.norm();
    if down < MIN_DOWN_COMPONENT {
        return Err(Error::RayParallelToGround);
    }
    let lambda = height / -ray.z;
    let position: Vector3<f64> = center + ray * lambda;
    Ok(Landmark { id: obs.landmark_id, position, observations: obs.track_length, triangulated: true })
}
