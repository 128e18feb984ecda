//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion does.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use ftquad::attitude::{AttitudeEstimate, ComplementaryFilter, ComplementaryFilterConfig, FilterMode};
use ftquad::dynamics::{build_allocation_matrix, QuadrotorParams, RigidBodyState, StateDerivative};
use ftquad::ftc::{allocate, ndi_attitude_control, thrust_control, NdiVariant};
use ftquad::harness::{compute_metrics, run_scenario, Frontend, MetricsReport, ScenarioConfig, Trace};
use ftquad::math::so3_log;
use ftquad::par::ExecMode;
use ftquad::rng::{stream, SimRng};
use ftquad::sensorsim::{
    build_event_frame, clusters, select_window, simulate_imu, CameraModel, Event, EventGenerator, FrontendDegradation,
    ImuModel, LandmarkField,
};
use ftquad::vio::{
    optimize_window, residual_blocks, synthetic, CostWeights, FrameState, ResidualBlock, SolverOptions, WindowProblem,
};
use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector2, Vector3};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn config(rel: &str) -> ScenarioConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(rel);
    ScenarioConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn timed_run(cfg: &ScenarioConfig, mode: ExecMode) -> (Trace, MetricsReport, f64) {
    let t0 = Instant::now();
    let trace = run_scenario(cfg, mode).unwrap();
    let wall = t0.elapsed().as_secs_f64();
    let report = compute_metrics(&trace).unwrap();
    (trace, report, wall)
}

fn uniform(rng: &mut SimRng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

fn close(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / (1.0 + scale.abs())
}

fn ndi_correctness() -> Outcome {
    let params = QuadrotorParams::default();
    let inertia = params.inertia_vector();
    let (ix, iy, iz) = (inertia.x, inertia.y, inertia.z);
    let full = build_allocation_matrix(&params).unwrap();
    let reduced: Vec<_> = (1..=4).map(|r| full.reduce(r).unwrap()).collect();
    let mut rng = stream(2024, 0);
    let (mut worst_torque, mut worst_printed, mut worst_thrust, mut worst_alloc) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let t0 = Instant::now();
    for _ in 0..1000 {
        let nz = uniform(&mut rng, 0.3, 1.0);
        let phi = uniform(&mut rng, -std::f64::consts::PI, std::f64::consts::PI);
        let s = (1.0 - nz * nz).sqrt();
        let n = Vector3::new(s * phi.cos(), s * phi.sin(), nz);
        let w =
            Vector3::new(uniform(&mut rng, -5.0, 5.0), uniform(&mut rng, -5.0, 5.0), uniform(&mut rng, -30.0, 30.0));
        let tilt = uniform(&mut rng, 0.0, 0.4);
        let az = uniform(&mut rng, -std::f64::consts::PI, std::f64::consts::PI);
        let fix = Vector3::new(tilt.sin() * az.cos(), tilt.sin() * az.sin(), tilt.cos());
        let kp = uniform(&mut rng, 1.0, 200.0);
        let kd = uniform(&mut rng, 1.0, 40.0);
        let (y1, y2) = (n.x - fix.x, n.y - fix.y);

        // derived law: the commanded torques reproduce ÿ = −kp y − kd ẏ
        // through Euler's equations with ω̇_z = 0 and a world-fixed n
        let (tx, ty) =
            ndi_attitude_control(&n, &w, &fix, kp, kd, 0.0, &Vector2::zeros(), &inertia, NdiVariant::Derived).unwrap();
        let w_dot = Vector3::new((tx - (iz - iy) * w.y * w.z) / ix, (ty - (ix - iz) * w.x * w.z) / iy, 0.0);
        let n_dot = n.cross(&w);
        let n_ddot = n_dot.cross(&w) + n.cross(&w_dot);
        let target = Vector2::new(-kp * y1 - kd * n_dot.x, -kp * y2 - kd * n_dot.y);
        let scale = kp + kd * w.amax() + w.amax().powi(2);
        worst_torque = worst_torque.max(close(n_ddot.x, target.x, scale)).max(close(n_ddot.y, target.y, scale));

        // printed law, transcribed bracket by bracket
        let (px, py) =
            ndi_attitude_control(&n, &w, &fix, kp, kd, 0.0, &Vector2::zeros(), &inertia, NdiVariant::AsPrinted)
                .unwrap();
        let (nx, ny) = (n.x, n.y);
        let (wx, wy, wz) = (w.x, w.y, w.z);
        let row1 = kp * y2 + kd * (nx * wz - nz * wx) + (ny * wz - nz * wx) * wz;
        let row2 = kp * y1 + kd * (nz * wy - ny * wz) + (nx * wz - nz * wy) * wz;
        let ox = row1 * ix / nz + iz * wy * wz - ix * wy * wz;
        let oy = -row2 * iy / nz + ix * wx * wz - iz * wx * wz;
        worst_printed = worst_printed.max(close(px, ox, ox)).max(close(py, oy, oy));

        // thrust law: the vertical component of body thrust gives a_z
        let roll = uniform(&mut rng, -0.6, 0.6);
        let pitch = uniform(&mut rng, -0.6, 0.6);
        let a_z = uniform(&mut rng, -3.0, 3.0);
        let thrust = thrust_control(a_z, roll, pitch, &params).unwrap();
        let q = UnitQuaternion::from_euler_angles(roll, pitch, uniform(&mut rng, -3.0, 3.0));
        let vertical = (q * Vector3::new(0.0, 0.0, thrust)).z / params.mass - params.gravity;
        worst_thrust = worst_thrust.max(close(vertical, a_z, a_z));

        // allocation: the per-rotor forces and moment arms give (T, τx, τy)
        let failed = rng.random_range(1..=4usize);
        let (t, tx, ty) = (uniform(&mut rng, 2.0, 12.0), uniform(&mut rng, -0.3, 0.3), uniform(&mut rng, -0.3, 0.3));
        let out = allocate(t, tx, ty, &reduced[failed - 1], &params, 0.0).unwrap();
        let ut = out.reduced_thrusts.unwrap();
        let mut wrench = Vector3::zeros();
        let mut k = 0;
        for rotor in 1..=4 {
            if rotor == failed {
                continue;
            }
            let moment = params.rotor_position(rotor).cross(&Vector3::new(0.0, 0.0, ut[k]));
            wrench += Vector3::new(ut[k], moment.x, moment.y);
            k += 1;
        }
        worst_alloc = worst_alloc.max(close(wrench.x, t, t)).max(close(wrench.y, tx, t)).max(close(wrench.z, ty, t));
    }
    let secs = t0.elapsed().as_secs_f64();
    let worst = worst_torque.max(worst_printed).max(worst_thrust).max(worst_alloc);
    outcome(
        worst < 1e-10 && secs < 1.0,
        format!(
            "worst relative error {worst:.1e} (torque {worst_torque:.1e}, printed {worst_printed:.1e}, \
             thrust {worst_thrust:.1e}, allocation {worst_alloc:.1e}); {secs:.3} s"
        ),
    )
}

fn fault_recovery() -> Outcome {
    let (trace, m, wall) = timed_run(&config("hover_truth.toml"), ExecMode::Parallel);
    let spin = m.mean_abs_yaw_rate.unwrap_or(0.0);
    let rmse = m.tracking_rmse.unwrap_or(f64::INFINITY);
    let scored = trace.rows.iter().filter(|r| r.phase == 2).count() as f64 * 0.005;
    outcome(
        !m.crashed && spin > 10.0 && rmse < 0.3 && scored >= 29.9 && wall < 60.0,
        format!("mean |ω_z| {spin:.1} rad/s, RMSE {rmse:.3} m over {scored:.1} s, wall {wall:.1} s"),
    )
}

/// Roll/pitch RMS of the filter on an exact steady spin at `rate` about the
/// vertical with the body tilted by `tilt`: the c.g. circles so that thrust
/// balances gravity, and the accelerometer sits 2.5 cm off the spin axis.
fn relaxed_hover_filter_rms(mode: FilterMode, tilt: f64, rate: f64, seed: u64) -> f64 {
    let g = 9.81;
    let q0 = UnitQuaternion::from_euler_angles(tilt, 0.0, 0.0);
    let body_rates = q0.inverse() * Vector3::new(0.0, 0.0, rate);
    let radius = g * tilt.tan() / (rate * rate);
    let state = |t: f64| {
        let q = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), rate * t) * q0;
        let up = q * Vector3::z();
        let h = Vector3::new(up.x, up.y, 0.0).normalize();
        let s = RigidBodyState {
            position: Vector3::new(0.0, 0.0, 1.5) - h * radius,
            velocity: -Vector3::z().cross(&h) * radius * rate,
            attitude: q,
            body_rates,
            time: t,
        };
        (s, StateDerivative { acceleration: h * g * tilt.tan(), angular_acceleration: Vector3::zeros() })
    };
    let imu = ImuModel::default();
    let cfg = ComplementaryFilterConfig { mode, lever_arm: imu.lever_arm, ..Default::default() };
    let mut rng = stream(seed, 0);
    let mut cf = ComplementaryFilter::new(cfg, AttitudeEstimate::from_quaternion(state(0.0).0.attitude, 0.0)).unwrap();
    let (mut sum, mut n) = (0.0, 0);
    for k in 0..=6000 {
        let t = k as f64 / imu.rate_hz;
        let (s, d) = state(t);
        let e = cf.update(&simulate_imu(&s, &d, &imu, &mut rng), None);
        if t >= 10.0 {
            let (roll, pitch, _) = s.attitude.euler_angles();
            sum += (e.roll - roll).powi(2) + (e.pitch - pitch).powi(2);
            n += 1;
        }
    }
    (sum / n as f64).sqrt().to_degrees()
}

fn rotation_corrected_filter() -> Outcome {
    let tilt = 15f64.to_radians();
    let corrected = relaxed_hover_filter_rms(FilterMode::Corrected, tilt, 20.0, 3);
    let standard = relaxed_hover_filter_rms(FilterMode::Standard, tilt, 20.0, 3);
    outcome(
        corrected < 3.0 && standard >= 3.0 * corrected,
        format!("corrected {corrected:.3}°, standard {standard:.3}° (×{:.1})", standard / corrected),
    )
}

fn dense_jacobian(b: &ResidualBlock, p: &WindowProblem) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(b.residual.len(), p.dims());
    for (prm, jb) in &b.jacobians {
        if let Some((o, jb)) = p.param_block(*prm, jb) {
            let mut v = j.view_mut((0, o), (jb.nrows(), jb.ncols()));
            v += &jb;
        }
    }
    j
}

fn window_errors(a: &WindowProblem, b: &WindowProblem) -> (f64, f64) {
    let mut dp: f64 = 0.0;
    let mut dr: f64 = 0.0;
    for (x, y) in a.frames.iter().zip(&b.frames) {
        dp = dp.max((x.position - y.position).norm());
        dr = dr.max(so3_log(&(x.rotation().transpose() * y.rotation())).norm().to_degrees());
    }
    for (x, y) in a.landmarks.iter().zip(&b.landmarks) {
        dp = dp.max((x - y).norm());
    }
    (dp, dr)
}

fn random_unit(rng: &mut SimRng) -> Vector3<f64> {
    Vector3::from_fn(|_, _| uniform(rng, -1.0, 1.0)).normalize()
}

fn perturb_frame(f: &FrameState, rng: &mut SimRng, dp: f64, dtheta_deg: f64) -> FrameState {
    let mut d = [0.0; 15];
    d[0..3].copy_from_slice((random_unit(rng) * dp).as_slice());
    d[6..9].copy_from_slice((random_unit(rng) * dtheta_deg.to_radians()).as_slice());
    f.retract(&d)
}

fn vio_backend() -> Outcome {
    let seq = ExecMode::Sequential;
    let w = CostWeights { huber: 1e9, ..CostWeights::default() };
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let (truth, rig) = synthetic::problem(500 + seed, 3, 4);
        let mut rng = stream(seed, 7);
        let p = truth.retract(&DVector::from_fn(truth.dims(), |_, _| uniform(&mut rng, -0.02, 0.02)));
        let n = p.dims();
        for (bi, b) in residual_blocks(&p, &rig, &w, true, seq).iter().enumerate() {
            let ja = dense_jacobian(b, &p);
            for c in 0..n {
                let mut d = DVector::zeros(n);
                d[c] = h;
                let rp = residual_blocks(&p.retract(&d), &rig, &w, false, seq)[bi].residual.clone();
                d[c] = -h;
                let rm = residual_blocks(&p.retract(&d), &rig, &w, false, seq)[bi].residual.clone();
                let fd = (rp - rm) / (2.0 * h);
                let an = ja.column(c);
                worst = worst.max((&fd - an).amax() / (1.0 + an.amax()));
            }
        }
    }
    let (mut dp, mut dr) = (0.0f64, 0.0f64);
    for seed in 0..10 {
        let (truth, rig) = synthetic::problem(seed, 5, 30);
        let mut rng = stream(seed, 11);
        let mut init = truth.clone();
        for f in init.frames.iter_mut().skip(1) {
            *f = perturb_frame(f, &mut rng, 0.05, 2.0);
        }
        for x in &mut init.landmarks {
            *x += Vector3::from_fn(|_, _| uniform(&mut rng, -0.05, 0.05));
        }
        let (est, _) =
            optimize_window(&init, &rig, &CostWeights::default(), &SolverOptions::default(), ExecMode::Parallel)
                .unwrap();
        let (p, r) = window_errors(&est, &truth);
        dp = dp.max(p);
        dr = dr.max(r);
    }
    outcome(
        worst < 1e-5 && dp < 1e-4 && dr < 0.01,
        format!("worst Jacobian error {worst:.1e}; recovery {dp:.1e} m / {dr:.1e}° over 10 windows"),
    )
}

fn range_aided_scale() -> Outcome {
    // motionless window: no parallax, so only the height term fixes depth
    let (truth, rig) = synthetic::hover_problem(7, 5, 30);
    let c = rig.camera_center(&truth.frames[0]);
    let mut corrupt = truth.clone();
    for x in &mut corrupt.landmarks {
        *x = c + (*x - c) * 1.2;
    }
    let depth_error = |est: &WindowProblem| {
        let c = rig.camera_center(&est.frames[0]);
        let ratios: Vec<f64> =
            est.landmarks.iter().zip(&truth.landmarks).map(|(x, y)| (x - c).norm() / (y - c).norm()).collect();
        (ratios.iter().sum::<f64>() / ratios.len() as f64 - 1.0).abs()
    };
    let opts = SolverOptions::default();
    let w = CostWeights::default();
    let (with, _) = optimize_window(&corrupt, &rig, &w, &opts, ExecMode::Sequential).unwrap();
    let w0 = CostWeights { height: 0.0, ..w };
    let (without, _) = optimize_window(&corrupt, &rig, &w0, &opts, ExecMode::Sequential).unwrap();
    let (e1, e0) = (depth_error(&with), depth_error(&without));
    outcome(
        e1 < 0.02 && e0 > 0.1,
        format!("20% depth error → {:.2}% with height term, {:.1}% without", 100.0 * e1, 100.0 * e0),
    )
}

fn spinning_scene(rate: f64, duration: f64) -> (CameraModel, Vec<Event>, Vector3<f64>) {
    let cam = CameraModel::default();
    let field = LandmarkField::random(&mut stream(31, 0), -2.0, 2.0, 120);
    let omega = Vector3::new(-0.3, 0.25, 0.92).normalize() * rate;
    let q0 = UnitQuaternion::from_euler_angles(0.1, -0.05, 0.4);
    let mut s = RigidBodyState::at_rest(Vector3::new(0.0, 0.0, 1.5));
    let mut gen = EventGenerator::new(field.points.len(), stream(31, 1));
    let mut events = Vec::new();
    let steps = (duration / 1e-4).round() as usize;
    for k in 0..=steps {
        s.time = k as f64 * 1e-4;
        s.attitude = q0 * UnitQuaternion::from_scaled_axis(omega * s.time);
        gen.step(&s, &field, &cam, &FrontendDegradation::ideal(), &mut events);
    }
    (cam, events, omega)
}

fn event_compensation() -> Outcome {
    let t_k = 0.04;
    let mut pass = true;
    let mut parts = Vec::new();
    for rate in [5.0, 10.0, 20.0] {
        let (cam, events, omega) = spinning_scene(rate, t_k);
        let window = select_window(&events, t_k, &FrontendDegradation::ideal());
        let t0 = window[0].time;
        let raw = clusters(&build_event_frame(window, t_k, &Vector3::zeros(), 1.5, &cam));
        let comp = clusters(&build_event_frame(window, t_k, &(omega * (t_k - t0)), 1.5, &cam));
        let mean =
            |m: &BTreeMap<u32, (Vector2<f64>, f64, usize)>| m.values().map(|v| v.1).sum::<f64>() / m.len() as f64;
        let widest = comp.values().filter(|v| v.2 >= 3).map(|v| v.1).fold(0.0, f64::max);
        let (mr, mc) = (mean(&raw), mean(&comp));
        pass &= widest <= 1.0 && mc < mr;
        parts.push(format!("{rate:.0} rad/s: max {widest:.2} px, mean {mc:.2} vs {mr:.2} px"));
    }
    outcome(pass, parts.join("; "))
}

fn onboard_square() -> (Outcome, MetricsReport) {
    let (_, m, wall) = timed_run(&config("square.toml"), ExecMode::Parallel);
    let rmse = m.tracking_rmse.unwrap_or(f64::INFINITY);
    let detail = match &m.crash_reason {
        Some(r) => format!("crashed at {:.2} s ({r}); wall {wall:.1} s", m.crash_time.unwrap_or(0.0)),
        None => format!("RMSE {rmse:.3} m, wall {wall:.1} s"),
    };
    (outcome(!m.crashed && rmse < 0.5 && wall < 300.0, detail), m)
}

fn summary(m: &MetricsReport) -> String {
    match (&m.crash_reason, m.tracking_rmse) {
        (Some(r), _) => format!("crash at {:.2} s ({r})", m.crash_time.unwrap_or(0.0)),
        (None, Some(e)) => format!("RMSE {e:.3} m"),
        (None, None) => "no scored samples".into(),
    }
}

fn frontend_ordering(frames_square: &MetricsReport) -> (Outcome, Trace) {
    let (_, dark_frames, _) = timed_run(&config("lighting/frames_10lux.toml"), ExecMode::Parallel);
    let (dark_trace, dark_events, _) = timed_run(&config("lighting/events_10lux.toml"), ExecMode::Parallel);
    let mut square = config("square.toml");
    square.frontend = Frontend::Events;
    let (_, events_square, _) = timed_run(&square, ExecMode::Parallel);
    let severe = dark_frames.crashed && !dark_events.crashed && dark_events.tracking_rmse.is_some_and(|e| e < 0.6);
    let nominal = match (
        frames_square.crashed,
        events_square.crashed,
        frames_square.tracking_rmse,
        events_square.tracking_rmse,
    ) {
        (false, false, Some(a), Some(b)) => a.max(b) <= 1.5 * a.min(b),
        _ => false,
    };
    let detail = format!(
        "10 lux: frames {}, events {}; 500 lux square: frames {}, events {}",
        summary(&dark_frames),
        summary(&dark_events),
        summary(frames_square),
        summary(&events_square)
    );
    (outcome(severe && nominal, detail), dark_trace)
}

fn csv_bytes(t: &Trace) -> Vec<u8> {
    let mut out = Vec::new();
    t.write_csv(&mut out).unwrap();
    out
}

fn determinism(events_dark: &Trace) -> Outcome {
    let cfg = config("lighting/events_10lux.toml");
    let again = run_scenario(&cfg, ExecMode::Parallel).unwrap();
    let sequential = run_scenario(&cfg, ExecMode::Sequential).unwrap();
    let reference = csv_bytes(events_dark);
    let same_seed = again.rows == events_dark.rows && csv_bytes(&again) == reference;
    let same_mode = sequential.rows == events_dark.rows && csv_bytes(&sequential) == reference;
    let other_seed = ScenarioConfig { seed: cfg.seed + 1, ..cfg };
    let differs = run_scenario(&other_seed, ExecMode::Parallel).unwrap().rows != events_dark.rows;
    outcome(
        same_seed && same_mode && differs,
        format!(
            "{} rows; rerun identical: {same_seed}, sequential identical: {same_mode}, other seed differs: {differs}",
            events_dark.rows.len()
        ),
    )
}

#[test]
fn acceptance() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut record = |name: &'static str, o: Outcome| {
        // direct stdout so the verdicts show even when test output is captured
        let line = format!("{} {name}: {}\n", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        std::io::stdout().write_all(line.as_bytes()).unwrap();
        results.push((name, o));
    };
    record("1 ndi-correctness", ndi_correctness());
    record("2 fault-recovery", fault_recovery());
    record("3 rotation-corrected-filter", rotation_corrected_filter());
    record("4 vio-backend", vio_backend());
    record("5 range-aided-scale", range_aided_scale());
    record("6 event-compensation", event_compensation());
    let (o7, frames_square) = onboard_square();
    record("7 onboard-square", o7);
    let (o8, events_dark) = frontend_ordering(&frames_square);
    record("8 frames-vs-events", o8);
    record("9 determinism", determinism(&events_dark));
    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
