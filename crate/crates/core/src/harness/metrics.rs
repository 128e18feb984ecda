use serde::{Deserialize, Serialize};

use super::trace::{Trace, TraceRow, PHASE_SCORED};
use crate::error::Result;
use crate::math::wrap_angle;

/// Summary of a run over its scored segment. RMSE fields are `None` when
/// nothing was scored (for example after an early crash).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub duration: f64,
    pub scored_samples: usize,
    pub crashed: bool,
    pub crash_time: Option<f64>,
    pub crash_reason: Option<String>,
    /// True position against the active setpoint (m).
    pub tracking_rmse: Option<f64>,
    pub tracking_rmse_xyz: Option<[f64; 3]>,
    /// Controller-side position estimate against truth (m).
    pub estimation_position_rmse: Option<f64>,
    pub estimation_position_rmse_xyz: Option<[f64; 3]>,
    /// Roll/pitch error of the state fed to the controller (deg).
    pub estimation_tilt_rmse_deg: Option<f64>,
    /// Roll/pitch error of the complementary filter in each mode (deg).
    pub filter_corrected_rmse_deg: Option<f64>,
    pub filter_standard_rmse_deg: Option<f64>,
    pub mean_abs_yaw_rate: Option<f64>,
    /// Camera frames the estimator could not optimize.
    pub vio_dropouts: usize,
    pub degraded_samples: usize,
}

fn rms<F: Fn(&TraceRow) -> f64>(rows: &[&TraceRow], f: F) -> Option<f64> {
    if rows.is_empty() {
        return None;
    }
    Some((rows.iter().map(|r| f(r).powi(2)).sum::<f64>() / rows.len() as f64).sqrt())
}

fn norm_of(axes: Option<[f64; 3]>) -> Option<f64> {
    axes.map(|a| (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt())
}

fn axes<F: Fn(&TraceRow) -> [f64; 3]>(rows: &[&TraceRow], f: F) -> Option<[f64; 3]> {
    Some([rms(rows, |r| f(r)[0])?, rms(rows, |r| f(r)[1])?, rms(rows, |r| f(r)[2])?])
}

/// Aggregates the rows with scoring phase 2 (post failure and transient).
pub fn compute_metrics(trace: &Trace) -> Result<MetricsReport> {
    trace.validate()?;
    let scored: Vec<&TraceRow> = trace.rows.iter().filter(|r| r.phase == PHASE_SCORED).collect();
    let crash = trace.crash();
    let tracking = axes(&scored, |r| [r.x - r.sp_x, r.y - r.sp_y, r.z - r.sp_z]);
    let estimation = axes(&scored, |r| [r.est_x - r.x, r.est_y - r.y, r.est_z - r.z]);
    let tilt = |roll: fn(&TraceRow) -> f64, pitch: fn(&TraceRow) -> f64| {
        rms(&scored, |r| (wrap_angle(roll(r) - r.roll).powi(2) + wrap_angle(pitch(r) - r.pitch).powi(2)).sqrt())
            .map(f64::to_degrees)
    };
    let first = trace.rows.first().map_or(0.0, |r| r.t);
    let last = trace.rows.last().map_or(0.0, |r| r.t);
    Ok(MetricsReport {
        duration: last - first,
        scored_samples: scored.len(),
        crashed: crash.is_some(),
        crash_time: crash.as_ref().map(|c| c.time),
        crash_reason: crash.map(|c| c.reason),
        tracking_rmse: norm_of(tracking),
        tracking_rmse_xyz: tracking,
        estimation_position_rmse: norm_of(estimation),
        estimation_position_rmse_xyz: estimation,
        estimation_tilt_rmse_deg: tilt(|r| r.est_roll, |r| r.est_pitch),
        filter_corrected_rmse_deg: tilt(|r| r.cf_corrected_roll, |r| r.cf_corrected_pitch),
        filter_standard_rmse_deg: tilt(|r| r.cf_standard_roll, |r| r.cf_standard_pitch),
        mean_abs_yaw_rate: (!scored.is_empty())
            .then(|| scored.iter().map(|r| r.wz.abs()).sum::<f64>() / scored.len() as f64),
        vio_dropouts: trace.rows.iter().filter(|r| r.frame && !r.vio_optimized).count(),
        degraded_samples: trace.rows.iter().filter(|r| r.degraded).count(),
    })
}
