//! Closed-loop scenario runner: configuration, trace, metrics and sweeps.

mod compare;
mod config;
mod metrics;
mod scenario;
mod trace;

pub use compare::{compare_runs, Comparison, ComparisonRow};
pub use config::{
    CrashLimits, FailureSpec, Feedback, Frontend, LandmarkSpec, Pattern, ScenarioConfig, SetpointSchedule,
};
pub use metrics::{compute_metrics, MetricsReport};
pub use scenario::run_scenario;
pub use trace::{CrashRecord, Trace, TraceRow, PHASE_PRE_FAILURE, PHASE_SCORED, PHASE_TRANSIENT};
