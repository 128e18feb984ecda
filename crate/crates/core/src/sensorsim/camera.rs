use nalgebra::{Matrix3, UnitQuaternion, Vector2, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::RigidBodyState;
use crate::error::{Error, Result};
use crate::math::so3_exp;
use crate::rng::SimRng;

const MIN_DEPTH: f64 = 0.05;

/// Pinhole camera rigidly mounted looking down. Pixel centers sit at integer
/// coordinates; the principal point defaults to the image center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraModel {
    pub width: u32,
    pub height: u32,
    pub hfov_deg: f64,
    pub rate_hz: f64,
    /// Camera origin in the body frame (m).
    pub offset: [f64; 3],
    /// Extra rotation (scaled axis, body frame) applied on top of the nadir mount.
    pub mount_tilt: [f64; 3],
    /// Detector cap on simultaneously tracked features.
    pub max_features: usize,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            width: 346,
            height: 240,
            hfov_deg: 110.0,
            rate_hz: 50.0,
            offset: [0.0; 3],
            mount_tilt: [0.0; 3],
            max_features: 40,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("camera resolution must be non-zero".into()));
        }
        if !(self.hfov_deg > 0.0 && self.hfov_deg < 179.0) {
            return Err(Error::Config("camera fov must lie in (0, 179) degrees".into()));
        }
        if !(self.rate_hz > 0.0) {
            return Err(Error::Config("camera rate must be positive".into()));
        }
        Ok(())
    }

    pub fn focal(&self) -> f64 {
        0.5 * self.width as f64 / (0.5 * self.hfov_deg.to_radians()).tan()
    }

    pub fn principal_point(&self) -> Vector2<f64> {
        Vector2::new(self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    pub fn intrinsics(&self) -> Matrix3<f64> {
        let f = self.focal();
        let c = self.principal_point();
        Matrix3::new(f, 0.0, c.x, 0.0, f, c.y, 0.0, 0.0, 1.0)
    }

    /// Camera-to-body rotation. Camera x is body x, camera z points down.
    pub fn r_bc(&self) -> Matrix3<f64> {
        let nadir = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        so3_exp(&Vector3::from(self.mount_tilt)) * nadir
    }

    pub fn t_bc(&self) -> Vector3<f64> {
        Vector3::from(self.offset)
    }

    /// World-to-camera rotation `R_CI` and camera center for a body pose.
    pub fn camera_pose(&self, position: &Vector3<f64>, attitude: &UnitQuaternion<f64>) -> (Matrix3<f64>, Vector3<f64>) {
        let r_ib = attitude.to_rotation_matrix().into_inner();
        let r_ci = (r_ib * self.r_bc()).transpose();
        (r_ci, position + r_ib * self.t_bc())
    }

    /// Pinhole projection of a camera-frame point; `None` behind the camera.
    pub fn project_camera(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        if p.z < MIN_DEPTH {
            return None;
        }
        let f = self.focal();
        let c = self.principal_point();
        Some(Vector2::new(f * p.x / p.z + c.x, f * p.y / p.z + c.y))
    }

    /// `λ [u, v, 1]ᵀ = K R_CI (p_j − p_c)`.
    pub fn project(&self, r_ci: &Matrix3<f64>, center: &Vector3<f64>, landmark: &Vector3<f64>) -> Option<Vector2<f64>> {
        self.project_camera(&(r_ci * (landmark - center)))
    }

    /// Camera-frame ray with unit z through a pixel.
    pub fn backproject(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        let f = self.focal();
        let c = self.principal_point();
        Vector3::new((pixel.x - c.x) / f, (pixel.y - c.y) / f, 1.0)
    }

    pub fn in_image(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0 && pixel.y >= 0.0 && pixel.x <= self.width as f64 - 1.0 && pixel.y <= self.height as f64 - 1.0
    }
}

/// Front-end degradation knobs. The named presets emulate lighting levels by
/// scaling exposure (frames) and event yield (events); they are not a
/// photometric model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendDegradation {
    /// Pixel noise on frame-based feature positions (px).
    pub pixel_noise_std: f64,
    /// Per-frame, per-feature loss probability for either front-end.
    pub dropout_prob: f64,
    /// Exposure time of the standard camera (s).
    pub exposure_time: f64,
    /// Track-kill rate per unit of `‖ω‖ · exposure` (rad⁻¹).
    pub blur_kill_rate: f64,
    /// Fraction of boundary-crossing events the sensor reports.
    pub event_keep_prob: f64,
    /// Target event count per event frame.
    pub event_count: usize,
    /// Longest time span of an event frame (s).
    pub max_window: f64,
    /// Minimum warped events needed to report a feature.
    pub min_events_per_feature: usize,
}

impl Default for FrontendDegradation {
    fn default() -> Self {
        Self::preset("500lux").expect("built-in preset")
    }
}

impl FrontendDegradation {
    pub const PRESETS: [&'static str; 4] = ["500lux", "100lux", "50lux", "10lux"];

    pub fn preset(name: &str) -> Result<Self> {
        let (noise, dropout, exposure, keep, count, window) = match name {
            "500lux" => (0.5, 0.02, 0.001, 1.0, 3000, 0.05),
            "100lux" => (0.7, 0.04, 0.005, 0.7, 2400, 0.05),
            "50lux" => (1.0, 0.06, 0.012, 0.5, 1800, 0.06),
            "10lux" => (1.5, 0.08, 0.05, 0.3, 1000, 0.06),
            other => return Err(Error::Config(format!("unknown degradation preset '{other}'"))),
        };
        Ok(Self {
            pixel_noise_std: noise,
            dropout_prob: dropout,
            exposure_time: exposure,
            blur_kill_rate: 2.0,
            event_keep_prob: keep,
            event_count: count,
            max_window: window,
            min_events_per_feature: 2,
        })
    }

    /// No noise, no dropout, no blur, every event kept.
    pub fn ideal() -> Self {
        Self {
            pixel_noise_std: 0.0,
            dropout_prob: 0.0,
            exposure_time: 0.0,
            blur_kill_rate: 0.0,
            event_keep_prob: 1.0,
            event_count: 3000,
            max_window: 0.05,
            min_events_per_feature: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.dropout_prob, self.event_keep_prob];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("degradation probabilities must lie in [0, 1]".into()));
        }
        if self.pixel_noise_std < 0.0 || self.exposure_time < 0.0 || self.blur_kill_rate < 0.0 {
            return Err(Error::Config("degradation magnitudes must be non-negative".into()));
        }
        if self.event_count == 0 || !(self.max_window > 0.0) {
            return Err(Error::Config("event frames need a positive count and window".into()));
        }
        Ok(())
    }

    /// Probability that motion blur destroys a feature this frame.
    pub fn blur_kill_prob(&self, rate_norm: f64) -> f64 {
        1.0 - (-self.blur_kill_rate * rate_norm * self.exposure_time).exp()
    }
}

/// A tracked feature as reported by a front-end. `landmark_id` is the track
/// identifier the estimator sees; a re-detected landmark gets a fresh one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureObservation {
    pub frame: u64,
    pub landmark_id: u64,
    pub pixel: Vector2<f64>,
    pub track_length: u32,
    /// Index of the generating ground-truth landmark (diagnostics only).
    pub truth_id: usize,
}

/// Ground-plane landmark set.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkField {
    pub points: Vec<Vector3<f64>>,
}

impl LandmarkField {
    /// Uniformly scattered points on `z = 0` inside `[min, max]²`.
    pub fn random(rng: &mut SimRng, min: f64, max: f64, count: usize) -> Self {
        let points =
            (0..count).map(|_| Vector3::new(rng.random_range(min..max), rng.random_range(min..max), 0.0)).collect();
        Self { points }
    }
}

/// Track bookkeeping shared by both front-ends.
#[derive(Debug, Clone, Default)]
pub struct TrackBook {
    tracks: Vec<Option<(u64, u32)>>,
    next_id: u64,
}

impl TrackBook {
    pub fn new(landmarks: usize) -> Self {
        Self { tracks: vec![None; landmarks], next_id: 0 }
    }

    /// Turns this frame's detections (ascending landmark order) into
    /// observations. Continuing tracks take priority under the cap; any
    /// landmark not detected loses its track.
    pub fn update(&mut self, frame: u64, detections: &[(usize, Vector2<f64>)], cap: usize) -> Vec<FeatureObservation> {
        let mut keep: Vec<(usize, Vector2<f64>, bool)> = Vec::with_capacity(detections.len());
        let continuing = detections.iter().filter(|(j, _)| self.tracks[*j].is_some());
        let fresh = detections.iter().filter(|(j, _)| self.tracks[*j].is_none());
        for (j, px) in continuing.chain(fresh) {
            if keep.len() == cap {
                break;
            }
            keep.push((*j, *px, self.tracks[*j].is_some()));
        }
        keep.sort_by_key(|k| k.0);
        let mut seen = vec![false; self.tracks.len()];
        let mut out = Vec::with_capacity(keep.len());
        for (j, px, cont) in keep {
            seen[j] = true;
            let (id, len) = if cont {
                let (id, len) = self.tracks[j].expect("continuing");
                (id, len + 1)
            } else {
                self.next_id += 1;
                (self.next_id - 1, 1)
            };
            self.tracks[j] = Some((id, len));
            out.push(FeatureObservation { frame, landmark_id: id, pixel: px, track_length: len, truth_id: j });
        }
        for (j, s) in seen.iter().enumerate() {
            if !s {
                self.tracks[j] = None;
            }
        }
        out
    }
}

/// Frame-based front-end: noisy projections with dropout and blur kills.
#[derive(Debug, Clone)]
pub struct FrameTracker {
    book: TrackBook,
    rng: SimRng,
}

impl FrameTracker {
    pub fn new(landmarks: usize, rng: SimRng) -> Self {
        Self { book: TrackBook::new(landmarks), rng }
    }

    pub fn observe(
        &mut self,
        truth: &RigidBodyState,
        landmarks: &LandmarkField,
        cam: &CameraModel,
        deg: &FrontendDegradation,
        frame: u64,
    ) -> Vec<FeatureObservation> {
        observe_features(truth, landmarks, cam, deg, frame, &mut self.book, &mut self.rng)
    }
}

/// Projects visible landmarks, perturbs them and applies dropout and blur.
pub fn observe_features(
    truth: &RigidBodyState,
    landmarks: &LandmarkField,
    cam: &CameraModel,
    deg: &FrontendDegradation,
    frame: u64,
    book: &mut TrackBook,
    rng: &mut SimRng,
) -> Vec<FeatureObservation> {
    let (r_ci, center) = cam.camera_pose(&truth.position, &truth.attitude);
    let p_kill = deg.dropout_prob + (1.0 - deg.dropout_prob) * deg.blur_kill_prob(truth.body_rates.norm());
    let mut detections = Vec::new();
    for (j, lm) in landmarks.points.iter().enumerate() {
        let Some(px) = cam.project(&r_ci, &center, lm) else { continue };
        if !cam.in_image(&px) {
            continue;
        }
        let killed = rng.random::<f64>() < p_kill;
        let noise = if deg.pixel_noise_std > 0.0 {
            Vector2::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
                * deg.pixel_noise_std
        } else {
            Vector2::zeros()
        };
        if killed {
            continue;
        }
        let noisy = px + noise;
        if cam.in_image(&noisy) {
            detections.push((j, noisy));
        }
    }
    book.update(frame, &detections, cam.max_features)
}
