use nalgebra::{Vector3, Vector4};

use super::config::{Feedback, Frontend, ScenarioConfig};
use super::trace::{Trace, TraceRow, PHASE_PRE_FAILURE, PHASE_SCORED, PHASE_TRANSIENT};
use crate::attitude::{AttitudeEstimate, ComplementaryFilter, FilterMode};
use crate::dynamics::{build_allocation_matrix, state_derivative, step_dynamics, RigidBodyState, RotorCommand};
use crate::error::{Error, Result};
use crate::ftc::FaultTolerantController;
use crate::par::ExecMode;
use crate::rng::{stream, streams};
use crate::sensorsim::{
    build_event_frame, select_window, simulate_imu, simulate_range, window_rotation, Event, EventGenerator,
    EventTracker, FeatureObservation, FrameTracker, ImuModel, ImuSample, LandmarkField,
};
use crate::vio::{FrameState, FusionConfig, HighRateFusion, Rig, VioEstimator, VioOutput};

#[allow(clippy::large_enum_variant)]
enum FrontendState {
    Frames(FrameTracker),
    Events { generator: EventGenerator, tracker: EventTracker, buffer: Vec<Event> },
}

fn imu_frame_state(truth: &RigidBodyState, lever: &Vector3<f64>) -> FrameState {
    FrameState {
        index: 0,
        time: truth.time,
        position: truth.position + truth.attitude * lever,
        velocity: truth.velocity + truth.attitude * truth.body_rates.cross(lever),
        attitude: truth.attitude,
        accel_bias: Vector3::zeros(),
        gyro_bias: Vector3::zeros(),
    }
}

fn crash_reason(s: &RigidBodyState, setpoint: &Vector3<f64>, cfg: &ScenarioConfig) -> Option<&'static str> {
    if !s.is_finite() {
        return Some("divergence");
    }
    if s.position.z < cfg.crash.ground_height {
        return Some("ground");
    }
    let up = s.attitude * Vector3::z();
    if up.z < cfg.crash.max_tilt_deg.to_radians().cos() {
        return Some("flip");
    }
    if (s.position - setpoint).norm() > cfg.crash.geofence {
        return Some("geofence");
    }
    None
}

/// Runs one closed-loop scenario. Dynamics step at `dynamics_rate_hz`; the
/// IMU, filters and controller at `control_rate_hz`; camera frames and the
/// window estimator at the camera rate. Events are generated every dynamics
/// step. `mode` only affects how the estimator evaluates residuals; the
/// trace is identical either way.
pub fn run_scenario(cfg: &ScenarioConfig, mode: ExecMode) -> Result<Trace> {
    cfg.validate()?;
    let (ctrl_every, cam_every) = cfg.tick_ratios()?;
    let dt = 1.0 / cfg.dynamics_rate_hz;
    let dt_ctrl = 1.0 / cfg.control_rate_hz;
    let steps = (cfg.duration * cfg.dynamics_rate_hz).round() as usize;
    let params = cfg.quadrotor.clone();
    let model = build_allocation_matrix(&params)?;
    let deg = cfg.degradation()?;
    let failure = cfg.failure.active();
    let lever_true = params.lever_arm();
    let lever_est = Vector3::from(cfg.filter.lever_arm);
    let imu_model = ImuModel { lever_arm: lever_true.into(), gravity: params.gravity, ..cfg.imu.clone() };

    let mut landmark_rng = stream(cfg.seed, streams::LANDMARKS);
    let field =
        LandmarkField::random(&mut landmark_rng, -cfg.landmarks.extent, cfg.landmarks.extent, cfg.landmarks.count);
    let mut imu_rng = stream(cfg.seed, streams::IMU);
    let mut range_rng = stream(cfg.seed, streams::RANGE);
    let mut frontend = match cfg.frontend {
        Frontend::Frames => {
            FrontendState::Frames(FrameTracker::new(field.points.len(), stream(cfg.seed, streams::FRAMES)))
        }
        Frontend::Events => FrontendState::Events {
            generator: EventGenerator::new(field.points.len(), stream(cfg.seed, streams::EVENTS)),
            tracker: EventTracker::new(field.points.len(), stream(cfg.seed, streams::FRAMES)),
            buffer: Vec::new(),
        },
    };

    let mut truth = RigidBodyState::at_rest(cfg.setpoints.at(0.0));
    let mut controller = FaultTolerantController::new(cfg.gains.clone(), params.clone(), model.clone())?;
    let initial = AttitudeEstimate::from_quaternion(truth.attitude, 0.0);
    let mut corrected = ComplementaryFilter::new(
        crate::attitude::ComplementaryFilterConfig { mode: FilterMode::Corrected, ..cfg.filter.clone() },
        initial,
    )?;
    let mut standard = ComplementaryFilter::new(
        crate::attitude::ComplementaryFilterConfig { mode: FilterMode::Standard, ..cfg.filter.clone() },
        initial,
    )?;
    let rig = Rig::new(cfg.camera.clone(), lever_est);
    let mut vio = VioEstimator::new(cfg.vio.clone(), rig.clone(), mode)?;
    vio.initialize(imu_frame_state(&truth, &lever_est));
    let fusion_cfg = FusionConfig { lever_arm: lever_est, gravity: params.gravity, ..cfg.fusion.clone() };
    let mut fusion = HighRateFusion::new(fusion_cfg, truth.position, truth.velocity, 0.0)?;

    let mut cmd = RotorCommand::new(Vector4::repeat(params.hover_thrust() / 4.0), 0.0);
    let mut failed = false;
    let mut prev_imu: Option<(ImuSample, nalgebra::UnitQuaternion<f64>, Vector3<f64>)> = None;
    let mut gyro_history: Vec<ImuSample> = Vec::new();
    let mut pending_yaw: Option<f64> = None;
    let mut gyro_bias = Vector3::zeros();
    let mut last_vio: Option<VioOutput> = None;
    let mut frame_index = 0u64;
    let mut rows = Vec::with_capacity(steps / ctrl_every + 1);

    for k in 0..=steps {
        let t = k as f64 * dt;
        truth.time = t;
        let mut event = String::new();
        if let Some((rotor, t_fail)) = failure {
            if !failed && t >= t_fail {
                failed = true;
                controller.set_failure(rotor)?;
                event = format!("failure:{rotor}");
            }
        }
        if let FrontendState::Events { generator, buffer, .. } = &mut frontend {
            generator.step(&truth, &field, &cfg.camera, &deg, buffer);
        }

        if k % ctrl_every == 0 {
            let deriv = state_derivative(&truth, &cmd, &params, &model);
            let imu = simulate_imu(&truth, &deriv, &imu_model, &mut imu_rng);
            let yaw = pending_yaw.take();
            let att = match cfg.filter.mode {
                FilterMode::Corrected => {
                    standard.update(&imu, yaw);
                    corrected.update(&imu, yaw)
                }
                FilterMode::Standard => {
                    corrected.update(&imu, yaw);
                    standard.update(&imu, yaw)
                }
            };
            let omega_dot = match cfg.filter.mode {
                FilterMode::Corrected => corrected.omega_dot(),
                FilterMode::Standard => standard.omega_dot(),
            };
            if let Some((p_imu, p_att, p_wd)) = &prev_imu {
                fusion.predict(p_imu, p_att, p_wd, imu.time - p_imu.time);
            }
            prev_imu = Some((imu, att.quaternion, omega_dot));
            vio.push_imu(imu);
            gyro_history.push(imu);
            let keep = t - 2.0 * deg.max_window - dt_ctrl;
            let cut = gyro_history.partition_point(|s| s.time < keep);
            gyro_history.drain(..cut);

            let mut frame_row = false;
            let mut n_features = 0;
            if k % (ctrl_every * cam_every) == 0 && k > 0 {
                frame_row = true;
                frame_index += 1;
                let range = simulate_range(&truth, &cfg.range, &mut range_rng);
                let obs: Vec<FeatureObservation> = match &mut frontend {
                    FrontendState::Frames(tracker) => tracker.observe(&truth, &field, &cfg.camera, &deg, frame_index),
                    FrontendState::Events { tracker, buffer, .. } => {
                        let window = select_window(buffer, t, &deg);
                        let t0 = window.first().map_or(t, |e| e.time);
                        let unbiased: Vec<ImuSample> =
                            gyro_history.iter().map(|s| ImuSample { gyro: s.gyro - gyro_bias, ..*s }).collect();
                        let rotation = window_rotation(&unbiased, t0, t);
                        let depth = if range.valid { range.range } else { cfg.setpoints.origin[2] };
                        let ev_frame = build_event_frame(window, t, &rotation, depth, &cfg.camera);
                        let obs = tracker.detect(&ev_frame, &cfg.camera, &deg, frame_index);
                        let cut = buffer.partition_point(|e| e.time <= t - deg.max_window);
                        buffer.drain(..cut);
                        obs
                    }
                };
                n_features = obs.len() as u32;
                let out = vio.process_frame(t, &obs, Some(&range))?;
                if out.optimized {
                    fusion.accel_bias = out.frame.accel_bias;
                    gyro_bias = out.frame.gyro_bias;
                    fusion.update_position(t, &rig.cg_position(&out.frame));
                    pending_yaw = Some(out.frame.attitude.euler_angles().2);
                }
                last_vio = Some(out);
            }

            let fused = fusion.estimate();
            let mut setpoint = cfg.setpoints.at(t);
            let estimate = match cfg.feedback {
                Feedback::Truth => truth,
                Feedback::Onboard => RigidBodyState {
                    position: fused.position,
                    velocity: fused.velocity,
                    attitude: att.quaternion,
                    body_rates: imu.gyro - gyro_bias,
                    time: t,
                },
            };
            let degraded = cfg.feedback == Feedback::Onboard && fused.degraded;
            if degraded {
                // no usable position: hold height and damp velocity only
                setpoint.x = estimate.position.x;
                setpoint.y = estimate.position.y;
            }
            let step = controller.update(&estimate, &setpoint, cfg.pre_failure_yaw_rate, dt_ctrl);
            cmd = step.output.command;

            let phase = match failure {
                Some((_, tf)) if t < tf => PHASE_PRE_FAILURE,
                Some((_, tf)) if t < tf + cfg.transient => PHASE_TRANSIENT,
                None if t < cfg.transient => PHASE_TRANSIENT,
                _ => PHASE_SCORED,
            };
            let (roll, pitch, yaw) = truth.attitude.euler_angles();
            let (est_roll, est_pitch, est_yaw) = estimate.attitude.euler_angles();
            let c = corrected.estimate();
            let s = standard.estimate();
            let v = last_vio.as_ref();
            let vio_cg = v.map_or(truth.position, |o| rig.cg_position(&o.frame));
            rows.push(TraceRow {
                t,
                phase,
                x: truth.position.x,
                y: truth.position.y,
                z: truth.position.z,
                vx: truth.velocity.x,
                vy: truth.velocity.y,
                vz: truth.velocity.z,
                roll,
                pitch,
                yaw,
                wx: truth.body_rates.x,
                wy: truth.body_rates.y,
                wz: truth.body_rates.z,
                sp_x: setpoint.x,
                sp_y: setpoint.y,
                sp_z: setpoint.z,
                est_x: estimate.position.x,
                est_y: estimate.position.y,
                est_z: estimate.position.z,
                est_vx: estimate.velocity.x,
                est_vy: estimate.velocity.y,
                est_vz: estimate.velocity.z,
                est_roll,
                est_pitch,
                est_yaw,
                cf_corrected_roll: c.roll,
                cf_corrected_pitch: c.pitch,
                cf_standard_roll: s.roll,
                cf_standard_pitch: s.pitch,
                u1: cmd.thrusts[0],
                u2: cmd.thrusts[1],
                u3: cmd.thrusts[2],
                u4: cmd.thrusts[3],
                n_x: step.attitude.n_world.x,
                n_y: step.attitude.n_world.y,
                n_z: step.attitude.n_world.z,
                frame: frame_row,
                features: n_features,
                vio_landmarks: v.map_or(0, |o| o.landmarks as u32),
                vio_optimized: v.is_some_and(|o| o.optimized),
                vio_iterations: v.map_or(0, |o| o.iterations as u32),
                vio_cost: v.map_or(0.0, |o| if o.cost_after.is_finite() { o.cost_after } else { 0.0 }),
                vio_x: vio_cg.x,
                vio_y: vio_cg.y,
                vio_z: vio_cg.z,
                degraded,
                event,
            });
        }
        if k == steps {
            break;
        }

        if let Some((rotor, _)) = failure.filter(|_| failed) {
            cmd.thrusts[rotor - 1] = 0.0;
        }
        let next = match step_dynamics(&truth, &cmd, &params, &model, dt) {
            Ok(s) => s,
            Err(Error::NumericalDivergence { .. }) => {
                mark_crash(&mut rows, "divergence");
                break;
            }
            Err(e) => return Err(e),
        };
        truth = next;
        if let Some(reason) = crash_reason(&truth, &cfg.setpoints.at(t + dt), cfg) {
            mark_crash(&mut rows, reason);
            break;
        }
    }
    Ok(Trace { rows })
}

fn mark_crash(rows: &mut [TraceRow], reason: &str) {
    if let Some(last) = rows.last_mut() {
        last.event = format!("crash:{reason}");
    }
}
