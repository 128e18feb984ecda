use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::cost::{build_cost, evaluate_cost, CostSystem, WindowProblem};
use super::types::{CostWeights, Rig};
use crate::error::{Error, Result};
use crate::par::ExecMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the cost by less than this fraction.
    pub relative_tolerance: f64,
    pub initial_lambda: f64,
    pub max_retries: usize,
    pub min_landmarks: usize,
    /// Whitened cost treated as an exact fit.
    pub cost_floor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            relative_tolerance: 1e-8,
            initial_lambda: 1e-4,
            max_retries: 5,
            min_landmarks: 4,
            cost_floor: 1e-16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub lambda: f64,
}

/// Solves `(H + λ D) δ = −g` by eliminating the 3×3 landmark blocks.
fn schur_step(sys: &CostSystem, lambda: f64) -> Option<DVector<f64>> {
    let nf = sys.g_f.len();
    let nl = sys.h_ll.len();
    let damp = |d: f64| lambda * d.max(1e-9);
    let mut s = sys.h_ff.clone();
    for i in 0..nf {
        s[(i, i)] += damp(sys.h_ff[(i, i)]);
    }
    let mut rhs = -sys.g_f.clone();
    let mut c_inv = Vec::with_capacity(nl);
    for l in 0..nl {
        let mut c = sys.h_ll[l];
        for i in 0..3 {
            c[(i, i)] += damp(sys.h_ll[l][(i, i)]);
        }
        let ci = c.try_inverse()?;
        let b = sys.h_fl.columns(3 * l, 3);
        let bci = b * ci;
        s -= &bci * b.transpose();
        rhs += &bci * sys.g_l[l];
        c_inv.push(ci);
    }
    let df = if nf > 0 { s.cholesky()?.solve(&rhs) } else { DVector::zeros(0) };
    let mut delta = DVector::zeros(nf + 3 * nl);
    delta.rows_mut(0, nf).copy_from(&df);
    for (l, ci) in c_inv.iter().enumerate() {
        let b = sys.h_fl.columns(3 * l, 3);
        let dl: Vector3<f64> = ci * (-sys.g_l[l] - b.transpose() * &df);
        delta.fixed_rows_mut::<3>(nf + 3 * l).copy_from(&dl);
    }
    Some(delta)
}

/// Levenberg–Marquardt on the window cost. On divergence the input window is
/// left untouched and an error is returned.
pub fn optimize_window(
    problem: &WindowProblem,
    rig: &Rig,
    weights: &CostWeights,
    options: &SolverOptions,
    mode: ExecMode,
) -> Result<(WindowProblem, SolveReport)> {
    let mut current = problem.clone();
    let mut sys = build_cost(&current, rig, weights, options.min_landmarks, mode)?;
    let initial_cost = sys.cost;
    let mut lambda = options.initial_lambda;
    let mut iterations = 0;
    let mut accepted = 0;
    while iterations < options.max_iterations && sys.cost > options.cost_floor {
        iterations += 1;
        let mut step = None;
        for _ in 0..=options.max_retries {
            if let Some(delta) = schur_step(&sys, lambda) {
                let candidate = current.retract(&delta);
                let cost = evaluate_cost(&candidate, rig, weights, mode);
                if cost.is_finite() && cost <= sys.cost {
                    step = Some((candidate, cost));
                    break;
                }
            }
            lambda *= 4.0;
        }
        let Some((candidate, cost)) = step else {
            if accepted > 0 || gradient_max(&sys) <= 1e-6 {
                break;
            }
            return Err(Error::Diverged { retries: options.max_retries });
        };
        accepted += 1;
        let decrease = (sys.cost - cost) / sys.cost.max(f64::MIN_POSITIVE);
        current = candidate;
        lambda = (lambda / 3.0).max(1e-12);
        sys = build_cost(&current, rig, weights, options.min_landmarks, mode)?;
        if decrease < options.relative_tolerance {
            break;
        }
    }
    let report = SolveReport { iterations, initial_cost, final_cost: sys.cost, lambda };
    Ok((current, report))
}

fn gradient_max(sys: &CostSystem) -> f64 {
    let gl = sys.g_l.iter().map(|g| g.amax()).fold(0.0, f64::max);
    sys.g_f.amax().max(gl)
}

/// Covariance of the free frame states, `S⁻¹` of the undamped reduced system.
pub fn frame_covariance(
    problem: &WindowProblem,
    rig: &Rig,
    weights: &CostWeights,
    mode: ExecMode,
) -> Result<DMatrix<f64>> {
    let sys = build_cost(problem, rig, weights, 1, mode)?;
    let mut s = sys.h_ff.clone();
    for l in 0..sys.h_ll.len() {
        let ci: Matrix3<f64> = sys.h_ll[l]
            .try_inverse()
            .ok_or_else(|| Error::UnderConstrained(format!("landmark {l} has a singular information block")))?;
        let b = sys.h_fl.columns(3 * l, 3);
        s -= b * ci * b.transpose();
    }
    s.try_inverse().ok_or_else(|| Error::UnderConstrained("reduced system is rank deficient".into()))
}

/// Eigenvalues of the full `JᵀJ` (frames then landmarks), ascending.
pub fn information_spectrum(problem: &WindowProblem, rig: &Rig, weights: &CostWeights) -> Result<Vec<f64>> {
    let sys = build_cost(problem, rig, weights, 1, ExecMode::Sequential)?;
    let nf = sys.g_f.len();
    let n = nf + 3 * sys.h_ll.len();
    let mut h = DMatrix::zeros(n, n);
    h.view_mut((0, 0), (nf, nf)).copy_from(&sys.h_ff);
    h.view_mut((0, nf), (nf, n - nf)).copy_from(&sys.h_fl);
    h.view_mut((nf, 0), (n - nf, nf)).copy_from(&sys.h_fl.transpose());
    for (l, c) in sys.h_ll.iter().enumerate() {
        h.view_mut((nf + 3 * l, nf + 3 * l), (3, 3)).copy_from(c);
    }
    let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}
