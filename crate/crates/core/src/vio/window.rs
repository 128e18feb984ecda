use std::collections::{BTreeMap, VecDeque};

use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};

use super::cost::{Observation, WindowProblem};
use super::preintegration::{preintegrate_imu, Preintegrated};
use super::solver::{optimize_window, SolverOptions};
use super::triangulate::triangulate_range;
use super::types::{CostWeights, FrameState, Landmark, Rig};
use crate::error::{Error, Result};
use crate::math::gravity_vector;
use crate::par::ExecMode;
use crate::sensorsim::{FeatureObservation, ImuSample, RangeSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VioConfig {
    /// Frames kept in the window (`K`).
    pub window_size: usize,
    /// Track length required before a landmark is triangulated.
    pub min_track_length: u32,
    pub max_imu_gap: f64,
    pub weights: CostWeights,
    pub solver: SolverOptions,
    pub gravity: f64,
}

impl Default for VioConfig {
    fn default() -> Self {
        Self {
            window_size: 5,
            min_track_length: 3,
            max_imu_gap: 0.1,
            weights: CostWeights::default(),
            solver: SolverOptions::default(),
            gravity: crate::math::GRAVITY,
        }
    }
}

impl VioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_size < 2 {
            return Err(Error::Config(format!("window size {} must be at least 2", self.window_size)));
        }
        let w = &self.weights;
        if !(w.pixel_sigma > 0.0 && w.huber > 0.0 && w.height >= 0.0) {
            return Err(Error::Config("cost weights must be positive".into()));
        }
        Ok(())
    }
}

/// The `K` most recent frames with their observations, range heights and
/// the inertial terms linking consecutive frames. Older states are dropped
/// outright.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SlidingWindow {
    pub frames: VecDeque<FrameState>,
    pub observations: VecDeque<Vec<FeatureObservation>>,
    pub heights: VecDeque<Option<f64>>,
    /// `preintegrated[k]` links `frames[k]` and `frames[k + 1]`.
    pub preintegrated: VecDeque<Option<Preintegrated>>,
    pub landmarks: BTreeMap<u64, Landmark>,
}

impl SlidingWindow {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn latest(&self) -> Option<&FrameState> {
        self.frames.back()
    }

    fn push(
        &mut self,
        frame: FrameState,
        obs: Vec<FeatureObservation>,
        height: Option<f64>,
        pre: Option<Preintegrated>,
    ) {
        if !self.frames.is_empty() {
            self.preintegrated.push_back(pre);
        }
        self.frames.push_back(frame);
        self.observations.push_back(obs);
        self.heights.push_back(height);
    }

    fn trim(&mut self, k: usize) {
        while self.frames.len() > k {
            self.frames.pop_front();
            self.observations.pop_front();
            self.heights.pop_front();
            self.preintegrated.pop_front();
        }
        let seen: std::collections::BTreeSet<u64> = self.observations.iter().flatten().map(|o| o.landmark_id).collect();
        self.landmarks.retain(|id, _| seen.contains(id));
    }

    /// Flattens the window into a solver problem with the oldest frame fixed.
    pub fn problem(&self, gravity: f64) -> (WindowProblem, Vec<u64>) {
        let ids: Vec<u64> = self.landmarks.keys().copied().collect();
        let index: BTreeMap<u64, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let observations = self
            .observations
            .iter()
            .enumerate()
            .flat_map(|(k, obs)| {
                let index = &index;
                obs.iter().filter_map(move |o| {
                    index.get(&o.landmark_id).map(|&l| Observation { frame: k, landmark: l, pixel: o.pixel })
                })
            })
            .collect();
        let problem = WindowProblem {
            frames: self.frames.iter().copied().collect(),
            landmarks: ids.iter().map(|id| self.landmarks[id].position).collect(),
            observations,
            heights: self.heights.iter().copied().collect(),
            preintegrated: self.preintegrated.iter().cloned().collect(),
            fixed_frames: 1,
            anchor_velocity_free: true,
            gravity,
        };
        (problem, ids)
    }

    fn absorb(&mut self, solved: &WindowProblem, ids: &[u64]) {
        for (f, s) in self.frames.iter_mut().zip(&solved.frames) {
            *f = *s;
        }
        for (id, x) in ids.iter().zip(&solved.landmarks) {
            if let Some(l) = self.landmarks.get_mut(id) {
                l.position = *x;
            }
        }
    }
}

/// What the estimator reports for each camera frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VioOutput {
    pub time: f64,
    pub frame: FrameState,
    pub landmarks: usize,
    pub cost_before: f64,
    pub cost_after: f64,
    pub iterations: usize,
    /// True when this frame was optimized; false means IMU propagation only.
    pub optimized: bool,
}

/// Frame-synchronous sliding-window estimator. One frame is processed at a
/// time; residual evaluation inside the solver may fan out.
#[derive(Debug, Clone)]
pub struct VioEstimator {
    pub config: VioConfig,
    pub rig: Rig,
    pub mode: ExecMode,
    window: SlidingWindow,
    imu: Vec<ImuSample>,
    next_index: u64,
}

/// Propagates a frame through a preintegrated interval.
pub fn predict_frame(f: &FrameState, pre: &Preintegrated, gravity: f64, time: f64) -> FrameState {
    let g = gravity_vector(gravity);
    let r = f.rotation();
    FrameState {
        index: f.index + 1,
        time,
        position: f.position + f.velocity * pre.dt + 0.5 * g * pre.dt * pre.dt + r * pre.delta_p,
        velocity: f.velocity + g * pre.dt + r * pre.delta_v,
        attitude: UnitQuaternion::from_matrix(&(r * pre.delta_r)),
        ..*f
    }
}

impl VioEstimator {
    pub fn new(config: VioConfig, rig: Rig, mode: ExecMode) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, rig, mode, window: SlidingWindow::default(), imu: Vec::new(), next_index: 0 })
    }

    pub fn window(&self) -> &SlidingWindow {
        &self.window
    }

    pub fn is_initialized(&self) -> bool {
        !self.window.is_empty()
    }

    /// Seeds the window with a known state (IMU point).
    pub fn initialize(&mut self, state: FrameState) {
        self.window = SlidingWindow::default();
        self.next_index = state.index + 1;
        self.window.push(state, Vec::new(), None, None);
    }

    pub fn push_imu(&mut self, sample: ImuSample) {
        self.imu.push(sample);
    }

    /// Adds the frame at `time`, triangulates mature tracks and re-solves
    /// the window. Failures fall back to IMU propagation.
    pub fn process_frame(
        &mut self,
        time: f64,
        observations: &[FeatureObservation],
        range: Option<&RangeSample>,
    ) -> Result<VioOutput> {
        let last = *self.window.latest().ok_or_else(|| Error::Config("estimator not initialized".into()))?;
        let pre = preintegrate_imu(
            &self.imu,
            last.time,
            time,
            &last.accel_bias,
            &last.gyro_bias,
            &self.config.weights.imu,
            self.config.max_imu_gap,
        )?;
        let mut frame = predict_frame(&last, &pre, self.config.gravity, time);
        frame.index = self.next_index;
        self.next_index += 1;
        let r = frame.rotation();
        let height = range.filter(|s| s.valid).map(|s| s.range * r[(2, 2)]).filter(|h| *h > 0.0);
        self.window.push(frame, observations.to_vec(), height, Some(pre));
        self.window.trim(self.config.window_size);
        let keep_from = self.window.frames.front().map_or(time, |f| f.time) - self.config.max_imu_gap;
        let cut = self.imu.partition_point(|s| s.time < keep_from).saturating_sub(1);
        self.imu.drain(..cut);

        if let Some(h) = height {
            for o in observations {
                if o.track_length >= self.config.min_track_length && !self.window.landmarks.contains_key(&o.landmark_id)
                {
                    if let Ok(l) = triangulate_range(o, &frame, h, &self.rig) {
                        self.window.landmarks.insert(o.landmark_id, l);
                    }
                }
            }
        }
        for l in self.window.landmarks.values_mut() {
            l.observations = self.window.observations.iter().flatten().filter(|o| o.landmark_id == l.id).count() as u32;
        }

        let (problem, ids) = self.window.problem(self.config.gravity);
        let landmarks = ids.len();
        let solved = optimize_window(&problem, &self.rig, &self.config.weights, &self.config.solver, self.mode);
        let (cost_before, cost_after, iterations, optimized) = match solved {
            Ok((p, report)) => {
                self.window.absorb(&p, &ids);
                (report.initial_cost, report.final_cost, report.iterations, true)
            }
            Err(Error::UnderConstrained(_) | Error::Diverged { .. }) => (f64::NAN, f64::NAN, 0, false),
            Err(e) => return Err(e),
        };
        let frame = *self.window.latest().expect("window holds the new frame");
        Ok(VioOutput { time, frame, landmarks, cost_before, cost_after, iterations, optimized })
    }
}
