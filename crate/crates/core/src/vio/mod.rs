//! Sliding-window visual-inertial odometry with a range-derived height prior.

mod cost;
mod fusion;
mod preintegration;
mod solver;
mod triangulate;
mod types;
mod window;

pub use cost::{
    build_cost, evaluate_cost, inertial_residual, residual_blocks, synthetic, BlockKind, CostSystem, Observation,
    Param, ResidualBlock, WindowProblem,
};
pub use fusion::{fuse_highrate, FusedEstimate, FusionConfig, HighRateFusion, PositionFix};
pub use preintegration::{preintegrate_imu, Preintegrated};
pub use solver::{frame_covariance, information_spectrum, optimize_window, SolveReport, SolverOptions};
pub use triangulate::triangulate_range;
pub use types::{CostWeights, FrameState, ImuNoise, Landmark, Rig, BA, BG, FRAME_DOF, P, R, V};
pub use window::{predict_frame, SlidingWindow, VioConfig, VioEstimator, VioOutput};
