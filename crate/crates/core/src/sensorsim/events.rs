use std::collections::BTreeMap;

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::camera::{CameraModel, FeatureObservation, FrontendDegradation, LandmarkField, TrackBook};
use super::imu::ImuSample;
use crate::dynamics::RigidBodyState;
use crate::math::{so3_exp, so3_log};
use crate::rng::SimRng;

/// A brightness-change event. `source` tags the landmark that produced it;
/// the simulated sensor knows it, a real one would not.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub pixel: [u16; 2],
    pub polarity: i8,
    pub source: u32,
}

impl Event {
    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.pixel[0] as f64, self.pixel[1] as f64)
    }
}

/// Time-stamped pixel positions of one landmark.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelTrajectory {
    pub source: u32,
    pub samples: Vec<(f64, Vector2<f64>)>,
}

fn boundaries(a: f64, b: f64) -> Vec<(f64, i64)> {
    // (fraction along a→b, signed step) for each half-integer crossed
    let (ca, cb) = (a.round() as i64, b.round() as i64);
    let span = b - a;
    let mut out = Vec::new();
    if cb > ca {
        for m in ca..cb {
            out.push(((m as f64 + 0.5 - a) / span, 1));
        }
    } else if cb < ca {
        for m in (cb + 1..=ca).rev() {
            out.push(((m as f64 - 0.5 - a) / span, -1));
        }
    }
    out
}

/// Events emitted while a point moves linearly from `p0` at `t0` to `p1` at
/// `t1`: one per pixel boundary crossed, stamped at the crossing time.
pub fn boundary_crossings(
    source: u32,
    (t0, p0): (f64, Vector2<f64>),
    (t1, p1): (f64, Vector2<f64>),
    cam: &CameraModel,
    out: &mut Vec<Event>,
) {
    let mut steps: Vec<(f64, usize, i64)> = boundaries(p0.x, p1.x).into_iter().map(|(s, d)| (s, 0, d)).collect();
    steps.extend(boundaries(p0.y, p1.y).into_iter().map(|(s, d)| (s, 1, d)));
    if steps.is_empty() {
        return;
    }
    steps.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let dx = p1.x - p0.x;
    let polarity = if dx > 0.0 || (dx == 0.0 && p1.y >= p0.y) { 1 } else { -1 };
    let mut cell = [p0.x.round() as i64, p0.y.round() as i64];
    for (s, axis, d) in steps {
        cell[axis] += d;
        let inside = cell[0] >= 0 && cell[1] >= 0 && cell[0] < cam.width as i64 && cell[1] < cam.height as i64;
        if inside {
            out.push(Event { time: t0 + s * (t1 - t0), pixel: [cell[0] as u16, cell[1] as u16], polarity, source });
        }
    }
}

fn thin(events: &mut Vec<Event>, keep: f64, rng: &mut SimRng) {
    if keep < 1.0 {
        events.retain(|_| rng.random::<f64>() < keep);
    }
}

fn sort_by_time(events: &mut [Event]) {
    events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.source.cmp(&b.source)));
}

/// Events for a set of continuous pixel trajectories, merged in time order.
pub fn synthesize_events(
    trajectories: &[PixelTrajectory],
    cam: &CameraModel,
    deg: &FrontendDegradation,
    rng: &mut SimRng,
) -> Vec<Event> {
    let mut out = Vec::new();
    for tr in trajectories {
        let mut local = Vec::new();
        for w in tr.samples.windows(2) {
            boundary_crossings(tr.source, w[0], w[1], cam, &mut local);
        }
        thin(&mut local, deg.event_keep_prob, rng);
        out.extend(local);
    }
    sort_by_time(&mut out);
    out
}

/// Incremental event source driven by the simulation clock.
#[derive(Debug, Clone)]
pub struct EventGenerator {
    previous: Vec<Option<(f64, Vector2<f64>)>>,
    rng: SimRng,
}

impl EventGenerator {
    pub fn new(landmarks: usize, rng: SimRng) -> Self {
        Self { previous: vec![None; landmarks], rng }
    }

    /// Appends the events generated since the previous call, in time order.
    pub fn step(
        &mut self,
        truth: &RigidBodyState,
        landmarks: &LandmarkField,
        cam: &CameraModel,
        deg: &FrontendDegradation,
        out: &mut Vec<Event>,
    ) {
        let (r_ci, center) = cam.camera_pose(&truth.position, &truth.attitude);
        let mut fresh = Vec::new();
        for (j, lm) in landmarks.points.iter().enumerate() {
            let now = cam.project(&r_ci, &center, lm).filter(|px| cam.in_image(px));
            if let (Some(prev), Some(px)) = (self.previous[j], now) {
                boundary_crossings(j as u32, prev, (truth.time, px), cam, &mut fresh);
            }
            self.previous[j] = now.map(|px| (truth.time, px));
        }
        thin(&mut fresh, deg.event_keep_prob, &mut self.rng);
        sort_by_time(&mut fresh);
        out.extend(fresh);
    }
}

/// Last `event_count` events inside `(t_k − max_window, t_k]` of a
/// time-sorted buffer.
pub fn select_window<'a>(events: &'a [Event], t_k: f64, deg: &FrontendDegradation) -> &'a [Event] {
    let end = events.partition_point(|e| e.time <= t_k);
    let start = events[..end].partition_point(|e| e.time <= t_k - deg.max_window);
    let start = start.max(end.saturating_sub(deg.event_count));
    &events[start..end]
}

/// Body rotation vector from `t0` to `t1`, integrating gyro samples held
/// constant until the next sample.
pub fn window_rotation(gyro: &[ImuSample], t0: f64, t1: f64) -> Vector3<f64> {
    if gyro.is_empty() || t1 <= t0 {
        return Vector3::zeros();
    }
    let mut r = nalgebra::Matrix3::identity();
    for (i, s) in gyro.iter().enumerate() {
        let seg_start = if i == 0 { f64::NEG_INFINITY } else { s.time };
        let seg_end = gyro.get(i + 1).map_or(f64::INFINITY, |n| n.time);
        let a = seg_start.max(t0);
        let b = seg_end.min(t1);
        if b > a {
            r *= so3_exp(&(s.gyro * (b - a)));
        }
    }
    so3_log(&r)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpedEvent {
    pub source: u32,
    pub pixel: Vector2<f64>,
    pub polarity: i8,
}

/// Accumulated, motion-compensated event image `I_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventFrame {
    pub t_start: f64,
    pub t_end: f64,
    pub width: u32,
    pub height: u32,
    /// Row-major polarity sums.
    pub image: Vec<i32>,
    pub warped: Vec<WarpedEvent>,
    pub low_confidence: bool,
}

impl EventFrame {
    pub fn at(&self, x: u32, y: u32) -> i32 {
        self.image[(y * self.width + x) as usize]
    }
}

/// Warps each event to `t_k` under a pure rotation, interpolated linearly in
/// time from the window rotation `rotation` (body frame, window start to
/// `t_k`), and accumulates polarities. `depth` is the scene depth used for
/// back-projection. A zero rotation gives the raw polarity histogram.
pub fn build_event_frame(
    events: &[Event],
    t_k: f64,
    rotation: &Vector3<f64>,
    depth: f64,
    cam: &CameraModel,
) -> EventFrame {
    let (w, h) = (cam.width, cam.height);
    let mut frame = EventFrame {
        t_start: events.first().map_or(t_k, |e| e.time),
        t_end: t_k,
        width: w,
        height: h,
        image: vec![0; (w * h) as usize],
        warped: Vec::with_capacity(events.len()),
        low_confidence: events.is_empty(),
    };
    let span = t_k - frame.t_start;
    let r_bc = cam.r_bc();
    for e in events {
        let x = e.position();
        let frac = if span > 0.0 { (t_k - e.time) / span } else { 0.0 };
        let warped = if frac == 0.0 || rotation.norm() == 0.0 {
            Some(x)
        } else {
            // camera at t_j to camera at t_k: R_BCᵀ Exp(φ_jk)ᵀ R_BC
            let r_rel = r_bc.transpose() * so3_exp(&(rotation * frac)).transpose() * r_bc;
            cam.project_camera(&(r_rel * (cam.backproject(&x) * depth)))
        };
        let Some(px) = warped else { continue };
        let (ix, iy) = (px.x.round(), px.y.round());
        if ix >= 0.0 && iy >= 0.0 && ix < w as f64 && iy < h as f64 {
            frame.image[(iy as u32 * w + ix as u32) as usize] += e.polarity as i32;
        }
        frame.warped.push(WarpedEvent { source: e.source, pixel: px, polarity: e.polarity });
    }
    frame
}

/// Per-source centroid and RMS radius of warped events.
pub fn clusters(frame: &EventFrame) -> BTreeMap<u32, (Vector2<f64>, f64, usize)> {
    let mut groups: BTreeMap<u32, Vec<Vector2<f64>>> = BTreeMap::new();
    for e in &frame.warped {
        groups.entry(e.source).or_default().push(e.pixel);
    }
    groups
        .into_iter()
        .map(|(s, pts)| {
            let n = pts.len();
            let c = pts.iter().sum::<Vector2<f64>>() / n as f64;
            let r = (pts.iter().map(|p| (p - c).norm_squared()).sum::<f64>() / n as f64).sqrt();
            (s, (c, r, n))
        })
        .collect()
}

/// Event-based front-end: features are the centroids of each landmark's
/// compensated events in the frame.
#[derive(Debug, Clone)]
pub struct EventTracker {
    book: TrackBook,
    rng: SimRng,
}

impl EventTracker {
    pub fn new(landmarks: usize, rng: SimRng) -> Self {
        Self { book: TrackBook::new(landmarks), rng }
    }

    pub fn detect(
        &mut self,
        frame: &EventFrame,
        cam: &CameraModel,
        deg: &FrontendDegradation,
        index: u64,
    ) -> Vec<FeatureObservation> {
        let mut detections = Vec::new();
        for (source, (c, _, n)) in clusters(frame) {
            let lost = self.rng.random::<f64>() < deg.dropout_prob;
            if lost || n < deg.min_events_per_feature || !cam.in_image(&c) {
                continue;
            }
            detections.push((source as usize, c));
        }
        self.book.update(index, &detections, cam.max_features)
    }
}
