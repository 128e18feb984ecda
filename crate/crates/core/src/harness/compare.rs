use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::metrics::{compute_metrics, MetricsReport};
use super::scenario::run_scenario;
use crate::error::{Error, Result};
use crate::par::{self, ExecMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub frontend: String,
    pub lighting: String,
    pub filter: String,
    pub report: Option<MetricsReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

/// Runs every scenario, each isolated and sequential inside, fanning out
/// across scenarios when `mode` is parallel. Row order follows the input.
pub fn compare_runs(runs: &[(String, ScenarioConfig)], mode: ExecMode) -> Result<Comparison> {
    if runs.len() < 2 {
        return Err(Error::Config(format!("comparison needs at least two runs, got {}", runs.len())));
    }
    let rows = par::map(mode, runs, |(label, cfg)| {
        let result = run_scenario(cfg, ExecMode::Sequential).and_then(|t| compute_metrics(&t));
        let lighting = if cfg.degradation.is_some() { "custom".to_string() } else { cfg.lighting.clone() };
        let filter =
            serde_json::to_value(cfg.filter.mode).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        let (report, error) = match result {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        };
        ComparisonRow { label: label.clone(), frontend: cfg.frontend.to_string(), lighting, filter, report, error }
    });
    Ok(Comparison { rows })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

impl std::fmt::Display for Comparison {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "{:<24} {:<7} {:<8} {:<10} {:>8} {:>9} {:>9} {:>8} {:>7}  crash",
            "label", "front", "light", "filter", "rmse_m", "est_m", "tilt_deg", "spin", "drops"
        )?;
        for r in &self.rows {
            match (&r.report, &r.error) {
                (Some(m), _) => writeln!(
                    f,
                    "{:<24} {:<7} {:<8} {:<10} {:>8} {:>9} {:>9} {:>8} {:>7}  {}",
                    r.label,
                    r.frontend,
                    r.lighting,
                    r.filter,
                    fmt_opt(m.tracking_rmse),
                    fmt_opt(m.estimation_position_rmse),
                    fmt_opt(m.estimation_tilt_rmse_deg),
                    fmt_opt(m.mean_abs_yaw_rate),
                    m.vio_dropouts,
                    match (&m.crash_reason, m.crash_time) {
                        (Some(reason), Some(t)) => format!("{reason} at {t:.2} s"),
                        _ => "no".to_string(),
                    }
                )?,
                (None, Some(e)) => writeln!(f, "{:<24} error: {e}", r.label)?,
                (None, None) => writeln!(f, "{:<24} no result", r.label)?,
            }
        }
        Ok(())
    }
}
