use thiserror::Error;

/// Errors raised by the simulator, controller and estimators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("allocation matrix is singular (condition number {condition:.3e})")]
    SingularAllocation { condition: f64 },

    #[error("reduced allocation for failed rotor {rotor} is singular (condition number {condition:.3e})")]
    SingularReducedAllocation { rotor: usize, condition: f64 },

    #[error("invalid rotor index {0}, expected 1..=4")]
    InvalidRotor(usize),

    #[error("numerical divergence at t = {time:.4} s")]
    NumericalDivergence { time: f64 },

    #[error("reduced attitude singular: |n_z| = {n_z:.3} is below 0.2")]
    AttitudeSingular { n_z: f64 },

    #[error("thrust singular: cos(roll)cos(pitch) = {cos_tilt:.3} is below 0.2")]
    ThrustSingular { cos_tilt: f64, clamped_thrust: f64 },

    #[error("degenerate desired acceleration: |a_des - g| = {norm:.3e}")]
    DegenerateDirection { norm: f64 },

    #[error("sliding window under-constrained: {0}")]
    UnderConstrained(String),

    #[error("optimization diverged after {retries} damped retries")]
    Diverged { retries: usize },

    #[error("landmark ray nearly parallel to the ground plane")]
    RayParallelToGround,

    #[error("trace error: {0}")]
    Trace(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
