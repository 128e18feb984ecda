use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, Vector2, Vector3};

use super::preintegration::Preintegrated;
use super::types::{CostWeights, FrameState, Rig, BA, BG, FRAME_DOF, P, R, V};
use crate::error::{Error, Result};
use crate::math::{gravity_vector, right_jacobian, right_jacobian_inv, skew, so3_exp, so3_log};
use crate::par::{self, ExecMode};

/// A feature measurement inside a window problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub frame: usize,
    pub landmark: usize,
    pub pixel: Vector2<f64>,
}

/// Flat view of a sliding window for the solver. The first `fixed_frames`
/// frames are held constant to pin the gauge. With `anchor_velocity_free`
/// the velocity of the last fixed frame stays a free parameter, so a
/// stale anchor velocity cannot be locked in by the inertial terms.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowProblem {
    pub frames: Vec<FrameState>,
    pub landmarks: Vec<Vector3<f64>>,
    pub observations: Vec<Observation>,
    /// Range-derived height ĥ of each frame.
    pub heights: Vec<Option<f64>>,
    /// Inertial terms between frame `k` and `k + 1`.
    pub preintegrated: Vec<Option<Preintegrated>>,
    pub fixed_frames: usize,
    pub anchor_velocity_free: bool,
    pub gravity: f64,
}

impl WindowProblem {
    pub fn free_frames(&self) -> usize {
        self.frames.len().saturating_sub(self.fixed_frames)
    }

    fn anchor_dims(&self) -> usize {
        if self.anchor_velocity_free && self.fixed_frames > 0 && self.fixed_frames <= self.frames.len() {
            3
        } else {
            0
        }
    }

    /// Number of frame parameters ahead of the landmark block.
    pub fn frame_dims(&self) -> usize {
        self.anchor_dims() + self.free_frames() * FRAME_DOF
    }

    /// Total number of free parameters.
    pub fn dims(&self) -> usize {
        self.frame_dims() + 3 * self.landmarks.len()
    }

    /// Offset of free frame `k` in the stacked parameter vector.
    pub fn frame_offset(&self, k: usize) -> Option<usize> {
        (k >= self.fixed_frames && k < self.frames.len())
            .then(|| self.anchor_dims() + (k - self.fixed_frames) * FRAME_DOF)
    }

    /// Maps a block Jacobian onto the stacked parameters: its column offset
    /// and the columns that remain free.
    pub fn param_block(&self, prm: Param, j: &DMatrix<f64>) -> Option<(usize, DMatrix<f64>)> {
        match prm {
            Param::Frame(k) => match self.frame_offset(k) {
                Some(o) => Some((o, j.clone())),
                None if self.anchor_dims() == 3 && k + 1 == self.fixed_frames => {
                    Some((0, j.columns(V, 3).into_owned()))
                }
                None => None,
            },
            Param::Landmark(l) => Some((self.frame_dims() + 3 * l, j.clone())),
        }
    }

    /// Applies a stacked increment `[anchor v, frames…, landmarks…]`.
    pub fn retract(&self, delta: &DVector<f64>) -> WindowProblem {
        let mut out = self.clone();
        let nf = self.frame_dims();
        if self.anchor_dims() == 3 {
            out.frames[self.fixed_frames - 1].velocity += delta.fixed_rows::<3>(0);
        }
        for k in self.fixed_frames..self.frames.len() {
            let o = self.frame_offset(k).expect("free frame");
            out.frames[k] = out.frames[k].retract(&delta.as_slice()[o..o + FRAME_DOF]);
        }
        for (l, x) in out.landmarks.iter_mut().enumerate() {
            *x += delta.fixed_rows::<3>(nf + 3 * l);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    Frame(usize),
    Landmark(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Visual,
    Height,
    Inertial,
}

/// Whitened residual with its Jacobians; robust scaling not yet applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub kind: BlockKind,
    pub residual: DVector<f64>,
    pub jacobians: Vec<(Param, DMatrix<f64>)>,
}

impl ResidualBlock {
    /// Cost contribution and the square-root IRLS weight.
    pub fn robust(&self, huber: f64) -> (f64, f64) {
        let s2 = self.residual.norm_squared();
        if self.kind != BlockKind::Visual || s2 <= huber * huber {
            return (s2, 1.0);
        }
        let s = s2.sqrt();
        (2.0 * huber * s - huber * huber, (huber / s).sqrt())
    }
}

fn visual_block(p: &WindowProblem, o: &Observation, rig: &Rig, w: &CostWeights, jac: bool) -> Option<ResidualBlock> {
    let f = &p.frames[o.frame];
    let x = &p.landmarks[o.landmark];
    let r_t = f.rotation().transpose();
    let q = r_t * (x - f.position);
    let pc = rig.r_bc.transpose() * (q - rig.t_ic);
    let px = rig.camera.project_camera(&pc)?;
    let residual = DVector::from_column_slice(((px - o.pixel) / w.pixel_sigma).as_slice());
    let mut jacobians = Vec::new();
    if jac {
        let fl = rig.camera.focal() / w.pixel_sigma;
        let z = pc.z;
        let dproj = SMatrix::<f64, 2, 3>::new(fl / z, 0.0, -fl * pc.x / (z * z), 0.0, fl / z, -fl * pc.y / (z * z));
        let rbc_t = rig.r_bc.transpose();
        let mut jf = DMatrix::zeros(2, FRAME_DOF);
        jf.view_mut((0, P), (2, 3)).copy_from(&(dproj * (-rbc_t * r_t)));
        jf.view_mut((0, R), (2, 3)).copy_from(&(dproj * rbc_t * skew(&q)));
        let jl = dproj * rbc_t * r_t;
        jacobians.push((Param::Frame(o.frame), jf));
        jacobians.push((Param::Landmark(o.landmark), DMatrix::from_column_slice(2, 3, jl.as_slice())));
    }
    Some(ResidualBlock { kind: BlockKind::Visual, residual, jacobians })
}

fn height_block(p: &WindowProblem, o: &Observation, h: f64, rig: &Rig, w: &CostWeights, jac: bool) -> ResidualBlock {
    let f = &p.frames[o.frame];
    let x = &p.landmarks[o.landmark];
    let s = w.height.sqrt();
    let sp = (w.planarity * w.height).sqrt();
    let c = rig.camera_center(f);
    let residual = DVector::from_column_slice(&[s * (c.z - h - x.z), sp * x.z]);
    let mut jacobians = Vec::new();
    if jac {
        let mut jf = DMatrix::zeros(2, FRAME_DOF);
        jf[(0, P + 2)] = s;
        let dth = -f.rotation() * skew(&rig.t_ic);
        for k in 0..3 {
            jf[(0, R + k)] = s * dth[(2, k)];
        }
        let mut jl = DMatrix::zeros(2, 3);
        jl[(0, 2)] = -s;
        jl[(1, 2)] = sp;
        jacobians.push((Param::Frame(o.frame), jf));
        jacobians.push((Param::Landmark(o.landmark), jl));
    }
    ResidualBlock { kind: BlockKind::Height, residual, jacobians }
}

/// Inertial residual `[r_R, r_v, r_p, r_ba, r_bg]` between frames `i` and `i + 1`.
pub fn inertial_residual(fi: &FrameState, fj: &FrameState, pre: &Preintegrated, gravity: f64) -> SMatrix<f64, 15, 1> {
    inertial_parts(fi, fj, pre, gravity).0
}

struct InertialParts {
    rot_err: Vector3<f64>,
    dbg: Vector3<f64>,
    v_term: Vector3<f64>,
    p_term: Vector3<f64>,
}

fn inertial_parts(
    fi: &FrameState,
    fj: &FrameState,
    pre: &Preintegrated,
    gravity: f64,
) -> (SMatrix<f64, 15, 1>, InertialParts) {
    let g = gravity_vector(gravity);
    let dt = pre.dt;
    let ri = fi.rotation();
    let dbg = fi.gyro_bias - pre.gyro_bias;
    let dba = fi.accel_bias - pre.accel_bias;
    let dr = pre.delta_r * so3_exp(&(pre.dr_dbg * dbg));
    let dv = pre.delta_v + pre.dv_dbg * dbg + pre.dv_dba * dba;
    let dp = pre.delta_p + pre.dp_dbg * dbg + pre.dp_dba * dba;
    let rot_err = so3_log(&(dr.transpose() * ri.transpose() * fj.rotation()));
    let v_term = ri.transpose() * (fj.velocity - fi.velocity - g * dt);
    let p_term = ri.transpose() * (fj.position - fi.position - fi.velocity * dt - 0.5 * g * dt * dt);
    let mut r = SMatrix::<f64, 15, 1>::zeros();
    r.fixed_rows_mut::<3>(0).copy_from(&rot_err);
    r.fixed_rows_mut::<3>(3).copy_from(&(v_term - dv));
    r.fixed_rows_mut::<3>(6).copy_from(&(p_term - dp));
    r.fixed_rows_mut::<3>(9).copy_from(&(fj.accel_bias - fi.accel_bias));
    r.fixed_rows_mut::<3>(12).copy_from(&(fj.gyro_bias - fi.gyro_bias));
    (r, InertialParts { rot_err, dbg, v_term, p_term })
}

fn inertial_block(
    p: &WindowProblem,
    k: usize,
    pre: &Preintegrated,
    w: &CostWeights,
    jac: bool,
) -> Option<ResidualBlock> {
    let (fi, fj) = (&p.frames[k], &p.frames[k + 1]);
    let (r, parts) = inertial_parts(fi, fj, pre, p.gravity);
    // whitening: r_w = L⁻¹ r with Σ = L Lᵀ
    let mut cov = SMatrix::<f64, 15, 15>::zeros();
    cov.fixed_view_mut::<9, 9>(0, 0).copy_from(&pre.covariance);
    let ba_var = w.imu.accel_random_walk.powi(2) * pre.dt;
    let bg_var = w.imu.gyro_random_walk.powi(2) * pre.dt;
    for i in 0..3 {
        cov[(9 + i, 9 + i)] = ba_var;
        cov[(12 + i, 12 + i)] = bg_var;
    }
    let l = cov.cholesky()?.l();
    let whiten = |m: &DMatrix<f64>| -> DMatrix<f64> {
        let l = DMatrix::from_column_slice(15, 15, l.as_slice());
        l.solve_lower_triangular(m).expect("cholesky factor is non-singular")
    };
    let rw = whiten(&DMatrix::from_column_slice(15, 1, r.as_slice()));
    let residual = DVector::from_column_slice(rw.as_slice());
    let mut jacobians = Vec::new();
    if jac {
        let ri = fi.rotation();
        let rj = fj.rotation();
        let jr_inv = right_jacobian_inv(&parts.rot_err);
        let mut ji = DMatrix::zeros(15, FRAME_DOF);
        let mut jj = DMatrix::zeros(15, FRAME_DOF);
        let put = |m: &mut DMatrix<f64>, r0: usize, c0: usize, b: &Matrix3<f64>| {
            m.view_mut((r0, c0), (3, 3)).copy_from(b);
        };
        let i3 = Matrix3::identity();
        // rotation
        put(&mut ji, 0, R, &(-jr_inv * rj.transpose() * ri));
        put(&mut jj, 0, R, &jr_inv);
        let jbg =
            -jr_inv * so3_exp(&parts.rot_err).transpose() * right_jacobian(&(pre.dr_dbg * parts.dbg)) * pre.dr_dbg;
        put(&mut ji, 0, BG, &jbg);
        // velocity
        put(&mut ji, 3, R, &skew(&parts.v_term));
        put(&mut ji, 3, V, &-ri.transpose());
        put(&mut jj, 3, V, &ri.transpose());
        put(&mut ji, 3, BA, &-pre.dv_dba);
        put(&mut ji, 3, BG, &-pre.dv_dbg);
        // position
        put(&mut ji, 6, R, &skew(&parts.p_term));
        put(&mut ji, 6, P, &-ri.transpose());
        put(&mut jj, 6, P, &ri.transpose());
        put(&mut ji, 6, V, &(-ri.transpose() * pre.dt));
        put(&mut ji, 6, BA, &-pre.dp_dba);
        put(&mut ji, 6, BG, &-pre.dp_dbg);
        // bias random walk
        put(&mut ji, 9, BA, &-i3);
        put(&mut jj, 9, BA, &i3);
        put(&mut ji, 12, BG, &-i3);
        put(&mut jj, 12, BG, &i3);
        jacobians.push((Param::Frame(k), whiten(&ji)));
        jacobians.push((Param::Frame(k + 1), whiten(&jj)));
    }
    Some(ResidualBlock { kind: BlockKind::Inertial, residual, jacobians })
}

enum BlockRef {
    Visual(usize),
    Height(usize),
    Inertial(usize),
}

/// Every residual block of the window cost, in a fixed order: visual and
/// height terms per observation, then inertial terms per frame pair.
pub fn residual_blocks(p: &WindowProblem, rig: &Rig, w: &CostWeights, jac: bool, mode: ExecMode) -> Vec<ResidualBlock> {
    let mut refs = Vec::with_capacity(2 * p.observations.len() + p.preintegrated.len());
    for (i, o) in p.observations.iter().enumerate() {
        refs.push(BlockRef::Visual(i));
        if w.height > 0.0 && p.heights[o.frame].is_some() {
            refs.push(BlockRef::Height(i));
        }
    }
    for (k, pre) in p.preintegrated.iter().enumerate() {
        if pre.as_ref().is_some_and(|x| x.valid) {
            refs.push(BlockRef::Inertial(k));
        }
    }
    par::map(mode, &refs, |r| match *r {
        BlockRef::Visual(i) => visual_block(p, &p.observations[i], rig, w, jac),
        BlockRef::Height(i) => {
            let o = &p.observations[i];
            Some(height_block(p, o, p.heights[o.frame].expect("checked"), rig, w, jac))
        }
        BlockRef::Inertial(k) => inertial_block(p, k, p.preintegrated[k].as_ref().expect("checked"), w, jac),
    })
    .into_iter()
    .flatten()
    .collect()
}

/// Total cost `Σ ρ(‖e_v‖²) + Σ ‖e_i‖² + Σ w_h e_h²`.
pub fn evaluate_cost(p: &WindowProblem, rig: &Rig, w: &CostWeights, mode: ExecMode) -> f64 {
    residual_blocks(p, rig, w, false, mode).iter().map(|b| b.robust(w.huber).0).sum()
}

/// Gauss–Newton normal equations split into frame and landmark parts.
#[derive(Debug, Clone)]
pub struct CostSystem {
    pub cost: f64,
    pub h_ff: DMatrix<f64>,
    pub g_f: DVector<f64>,
    /// Frame–landmark coupling, `3 · landmarks` columns.
    pub h_fl: DMatrix<f64>,
    pub h_ll: Vec<Matrix3<f64>>,
    pub g_l: Vec<Vector3<f64>>,
    pub residuals: usize,
}

/// Stacks all blocks into `JᵀJ` and `Jᵀr` over the free parameters.
pub fn build_cost(
    p: &WindowProblem,
    rig: &Rig,
    w: &CostWeights,
    min_landmarks: usize,
    mode: ExecMode,
) -> Result<CostSystem> {
    if p.frames.len() < 2 {
        return Err(Error::UnderConstrained(format!("{} frame(s) in window", p.frames.len())));
    }
    let observed: std::collections::BTreeSet<usize> = p.observations.iter().map(|o| o.landmark).collect();
    if observed.len() < min_landmarks {
        return Err(Error::UnderConstrained(format!("{} landmark(s), need {min_landmarks}", observed.len())));
    }
    let nf = p.frame_dims();
    let nl = p.landmarks.len();
    let mut sys = CostSystem {
        cost: 0.0,
        h_ff: DMatrix::zeros(nf, nf),
        g_f: DVector::zeros(nf),
        h_fl: DMatrix::zeros(nf, 3 * nl),
        h_ll: vec![Matrix3::zeros(); nl],
        g_l: vec![Vector3::zeros(); nl],
        residuals: 0,
    };
    for b in residual_blocks(p, rig, w, true, mode) {
        let (cost, s) = b.robust(w.huber);
        sys.cost += cost;
        sys.residuals += b.residual.len();
        let r = &b.residual * s;
        let js: Vec<(usize, DMatrix<f64>)> =
            b.jacobians.iter().filter_map(|(prm, j)| p.param_block(*prm, j).map(|(o, j)| (o, j * s))).collect();
        for (oa, ja) in &js {
            let g = ja.transpose() * &r;
            let is_lm_a = *oa >= nf;
            if is_lm_a {
                let l = (oa - nf) / 3;
                sys.g_l[l] += Vector3::from_column_slice(g.as_slice());
            } else {
                let mut seg = sys.g_f.rows_mut(*oa, ja.ncols());
                seg += &g;
            }
            for (ob, jb) in &js {
                let h = ja.transpose() * jb;
                match (is_lm_a, *ob >= nf) {
                    (false, false) => {
                        let mut v = sys.h_ff.view_mut((*oa, *ob), (ja.ncols(), jb.ncols()));
                        v += &h;
                    }
                    (false, true) => {
                        let mut v = sys.h_fl.view_mut((*oa, ob - nf), (ja.ncols(), 3));
                        v += &h;
                    }
                    (true, true) if oa == ob => {
                        let l = (oa - nf) / 3;
                        sys.h_ll[l] += Matrix3::from_column_slice(h.as_slice());
                    }
                    // landmark–landmark cross terms never occur; landmark–frame is the transpose
                    _ => {}
                }
            }
        }
    }
    Ok(sys)
}

/// Builds random, exactly consistent windows for tests and benches.
pub mod synthetic {
    use super::*;
    use crate::rng::stream;
    use crate::sensorsim::{CameraModel, ImuSample};
    use crate::vio::preintegration::preintegrate_imu;
    use nalgebra::UnitQuaternion;
    use rand::Rng;

    /// A window over ground landmarks (z = 0) whose frames are propagated
    /// with the preintegrated increments themselves, so the cost at truth is
    /// zero up to rounding.
    pub fn problem(seed: u64, n_frames: usize, n_landmarks: usize) -> (WindowProblem, Rig) {
        problem_with(seed, n_frames, n_landmarks, 1.0)
    }

    /// Level, motionless window with exact bias-only IMU readings.
    pub fn hover_problem(seed: u64, n_frames: usize, n_landmarks: usize) -> (WindowProblem, Rig) {
        problem_with(seed, n_frames, n_landmarks, 0.0)
    }

    /// `excitation` scales rates, velocity, tilt and specific-force variation.
    pub fn problem_with(seed: u64, n_frames: usize, n_landmarks: usize, excitation: f64) -> (WindowProblem, Rig) {
        let e = excitation;
        let mut rng = stream(seed, 0);
        let mut u = move |k: f64| k * (rng.random::<f64>() * 2.0 - 1.0);
        let rig = Rig::new(CameraModel::default(), Vector3::new(0.025, 0.0, 0.0));
        let gravity = 9.81;
        let g = gravity_vector(gravity);
        let ba = Vector3::new(u(0.05), u(0.05), u(0.05));
        let bg = Vector3::new(u(0.01), u(0.01), u(0.01));
        let noise = CostWeights::default().imu;
        let (dt, imu_dt) = (0.02, 0.005);
        let w = Vector3::new(u(3.0), u(3.0), u(20.0)) * e;
        let mut f = FrameState {
            index: 0,
            time: 0.0,
            position: Vector3::new(u(0.3), u(0.3), 1.5 + u(0.2)),
            velocity: Vector3::new(u(0.5), u(0.5), u(0.2)) * e,
            attitude: UnitQuaternion::from_euler_angles(e * u(0.2), e * u(0.2), u(3.0)),
            accel_bias: ba,
            gyro_bias: bg,
        };
        let mut samples = Vec::new();
        let n_imu = ((n_frames - 1) as f64 * dt / imu_dt).round() as usize;
        for k in 0..=n_imu {
            let a = Vector3::new(u(0.3), u(0.3), u(0.5)) * e + Vector3::z() * gravity;
            let jitter = Vector3::new(u(0.2), u(0.2), u(0.2)) * e;
            samples.push(ImuSample { time: k as f64 * imu_dt, gyro: w + bg + jitter, accel: a + ba });
        }
        let mut frames = vec![f];
        let mut preintegrated = Vec::new();
        for k in 1..n_frames {
            let t1 = k as f64 * dt;
            let pre = preintegrate_imu(&samples, f.time, t1, &ba, &bg, &noise, 0.1).expect("dense samples");
            let r = f.rotation();
            let next = FrameState {
                index: k as u64,
                time: t1,
                position: f.position + f.velocity * pre.dt + 0.5 * g * pre.dt * pre.dt + r * pre.delta_p,
                velocity: f.velocity + g * pre.dt + r * pre.delta_v,
                attitude: UnitQuaternion::from_matrix(&(r * pre.delta_r)),
                ..f
            };
            preintegrated.push(Some(pre));
            frames.push(next);
            f = next;
        }
        let mut landmarks = Vec::new();
        let mut observations = Vec::new();
        let c0 = rig.camera_center(&frames[0]);
        let mut tries = 0;
        while landmarks.len() < n_landmarks && tries < 100 * n_landmarks {
            tries += 1;
            let x = Vector3::new(c0.x + u(2.0), c0.y + u(2.0), 0.0);
            let px: Vec<_> = frames.iter().map(|f| rig.project(f, &x)).collect();
            if px.iter().all(|p| p.is_some_and(|p| rig.camera.in_image(&p))) {
                let l = landmarks.len();
                landmarks.push(x);
                for (k, p) in px.into_iter().enumerate() {
                    observations.push(Observation { frame: k, landmark: l, pixel: p.expect("checked") });
                }
            }
        }
        let heights = frames.iter().map(|f| Some(rig.camera_center(f).z)).collect();
        (
            WindowProblem {
                frames,
                landmarks,
                observations,
                heights,
                preintegrated,
                fixed_frames: 1,
                anchor_velocity_free: true,
                gravity,
            },
            rig,
        )
    }
}
