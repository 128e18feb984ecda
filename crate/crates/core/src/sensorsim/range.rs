use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::RigidBodyState;
use crate::rng::SimRng;

/// Downward range finder mounted at the c.g. along body −z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RangeModel {
    pub noise_std: f64,
    pub max_range: f64,
    pub max_tilt_deg: f64,
}

impl Default for RangeModel {
    fn default() -> Self {
        Self { noise_std: 0.01, max_range: 14.0, max_tilt_deg: 80.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeSample {
    pub time: f64,
    pub range: f64,
    pub valid: bool,
}

impl RangeSample {
    /// Height above ground implied by the range and an attitude estimate.
    pub fn height(&self, roll: f64, pitch: f64) -> f64 {
        self.range * roll.cos() * pitch.cos()
    }
}

/// Range along the body −z ray to the ground plane `z = 0`.
pub fn simulate_range(truth: &RigidBodyState, model: &RangeModel, rng: &mut SimRng) -> RangeSample {
    let invalid = RangeSample { time: truth.time, range: 0.0, valid: false };
    let boresight = truth.attitude * Vector3::new(0.0, 0.0, -1.0);
    let cos_tilt = -boresight.z;
    if cos_tilt <= model.max_tilt_deg.to_radians().cos() || truth.position.z <= 0.0 {
        return invalid;
    }
    let mut range = truth.position.z / cos_tilt;
    if model.noise_std > 0.0 {
        range += model.noise_std * rng.sample::<f64, _>(StandardNormal);
    }
    if !(range > 0.0) || range > model.max_range {
        return invalid;
    }
    RangeSample { time: truth.time, range, valid: true }
}
