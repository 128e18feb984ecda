use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::attitude::ComplementaryFilterConfig;
use crate::dynamics::QuadrotorParams;
use crate::error::{Error, Result};
use crate::ftc::ControllerGains;
use crate::sensorsim::{CameraModel, FrontendDegradation, ImuModel, RangeModel};
use crate::vio::{FusionConfig, VioConfig};

/// Which synthetic front-end feeds the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frontend {
    #[default]
    Frames,
    Events,
}

impl std::str::FromStr for Frontend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frames" => Ok(Frontend::Frames),
            "events" => Ok(Frontend::Events),
            other => Err(Error::Config(format!("unknown front-end '{other}'"))),
        }
    }
}

impl std::fmt::Display for Frontend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Frontend::Frames => "frames",
            Frontend::Events => "events",
        })
    }
}

/// State the controller is fed: ground truth or the onboard estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feedback {
    Truth,
    #[default]
    Onboard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FailureSpec {
    pub enabled: bool,
    /// Failed rotor, 1-based.
    pub rotor: usize,
    pub time: f64,
}

impl Default for FailureSpec {
    fn default() -> Self {
        Self { enabled: true, rotor: 4, time: 5.0 }
    }
}

impl FailureSpec {
    pub fn none() -> Self {
        Self { enabled: false, ..Self::default() }
    }

    /// `(rotor, time)` when a failure is scheduled.
    pub fn active(&self) -> Option<(usize, f64)> {
        self.enabled.then_some((self.rotor, self.time))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    Hover,
    #[default]
    Square,
}

/// Hover point, optionally followed by a square of nine setpoints: the four
/// corners and edge midpoints, returning to the start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SetpointSchedule {
    pub pattern: Pattern,
    /// Start point (m); the square extends toward +x and +y.
    pub origin: [f64; 3],
    pub side: f64,
    pub start_time: f64,
    pub step: f64,
}

impl Default for SetpointSchedule {
    fn default() -> Self {
        Self { pattern: Pattern::Square, origin: [0.0, 0.0, 1.5], side: 1.0, start_time: 8.0, step: 5.0 }
    }
}

impl SetpointSchedule {
    pub fn points(&self) -> Vec<Vector3<f64>> {
        let o = Vector3::from(self.origin);
        match self.pattern {
            Pattern::Hover => vec![o],
            Pattern::Square => {
                let h = self.side / 2.0;
                [
                    (0.0, 0.0),
                    (h, 0.0),
                    (2.0 * h, 0.0),
                    (2.0 * h, h),
                    (2.0 * h, 2.0 * h),
                    (h, 2.0 * h),
                    (0.0, 2.0 * h),
                    (0.0, h),
                    (0.0, 0.0),
                ]
                .iter()
                .map(|(x, y)| o + Vector3::new(*x, *y, 0.0))
                .collect()
            }
        }
    }

    pub fn at(&self, t: f64) -> Vector3<f64> {
        let pts = self.points();
        if t < self.start_time {
            return pts[0];
        }
        let k = ((t - self.start_time) / self.step).floor() as usize;
        pts[k.min(pts.len() - 1)]
    }

    /// Time at which the last setpoint becomes active.
    pub fn end_time(&self) -> f64 {
        self.start_time + (self.points().len() - 1) as f64 * self.step
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandmarkSpec {
    pub count: usize,
    /// Landmarks fill `[−extent, extent]²` on the ground plane (m).
    pub extent: f64,
}

impl Default for LandmarkSpec {
    fn default() -> Self {
        Self { count: 600, extent: 4.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrashLimits {
    /// Height below which the vehicle counts as on the ground (m).
    pub ground_height: f64,
    /// Largest allowed distance from the active setpoint (m).
    pub geofence: f64,
    /// Largest allowed angle between body z and world up (deg).
    pub max_tilt_deg: f64,
}

impl Default for CrashLimits {
    fn default() -> Self {
        Self { ground_height: 0.05, geofence: 3.0, max_tilt_deg: 90.0 }
    }
}

/// Declarative description of one closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub duration: f64,
    pub dynamics_rate_hz: f64,
    pub control_rate_hz: f64,
    pub feedback: Feedback,
    pub frontend: Frontend,
    /// Degradation preset name, used unless `degradation` is given.
    pub lighting: String,
    pub degradation: Option<FrontendDegradation>,
    pub failure: FailureSpec,
    /// Commanded yaw rate while all four rotors work (rad/s).
    pub pre_failure_yaw_rate: f64,
    /// Post-failure time excluded from scoring (s).
    pub transient: f64,
    pub setpoints: SetpointSchedule,
    pub landmarks: LandmarkSpec,
    pub crash: CrashLimits,
    pub quadrotor: QuadrotorParams,
    pub gains: ControllerGains,
    pub imu: ImuModel,
    pub range: RangeModel,
    pub camera: CameraModel,
    /// Estimator-side filter settings; `filter.lever_arm` is the lever arm
    /// the estimators assume.
    pub filter: ComplementaryFilterConfig,
    pub vio: VioConfig,
    pub fusion: FusionConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "square".into(),
            seed: 1,
            duration: 53.0,
            dynamics_rate_hz: 1000.0,
            control_rate_hz: 200.0,
            feedback: Feedback::Onboard,
            frontend: Frontend::Frames,
            lighting: "500lux".into(),
            degradation: None,
            failure: FailureSpec::default(),
            pre_failure_yaw_rate: 1.0,
            transient: 3.0,
            setpoints: SetpointSchedule::default(),
            landmarks: LandmarkSpec::default(),
            crash: CrashLimits::default(),
            quadrotor: QuadrotorParams::default(),
            gains: ControllerGains::default(),
            imu: ImuModel::default(),
            range: RangeModel::default(),
            camera: CameraModel::default(),
            filter: ComplementaryFilterConfig::default(),
            vio: VioConfig::default(),
            fusion: FusionConfig::default(),
        }
    }
}

impl ScenarioConfig {
    /// Hover at the origin point; failure at 5 s.
    pub fn hover(duration: f64) -> Self {
        Self {
            name: "hover".into(),
            duration,
            setpoints: SetpointSchedule { pattern: Pattern::Hover, ..SetpointSchedule::default() },
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn degradation(&self) -> Result<FrontendDegradation> {
        match &self.degradation {
            Some(d) => Ok(d.clone()),
            None => FrontendDegradation::preset(&self.lighting),
        }
    }

    /// Control ticks per dynamics tick and camera ticks per control tick.
    pub fn tick_ratios(&self) -> Result<(usize, usize)> {
        let ratio = |a: f64, b: f64, what: &str| -> Result<usize> {
            let r = a / b;
            if (r - r.round()).abs() > 1e-9 || r.round() < 1.0 {
                return Err(Error::Config(format!("{what} rates must divide evenly ({a} / {b})")));
            }
            Ok(r.round() as usize)
        };
        Ok((
            ratio(self.dynamics_rate_hz, self.control_rate_hz, "dynamics/control")?,
            ratio(self.control_rate_hz, self.camera.rate_hz, "control/camera")?,
        ))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::Config(format!("duration {} must be positive", self.duration)));
        }
        if !(self.dynamics_rate_hz > 0.0 && self.control_rate_hz > 0.0) {
            return Err(Error::Config("rates must be positive".into()));
        }
        if (self.imu.rate_hz - self.control_rate_hz).abs() > 1e-9 {
            return Err(Error::Config("imu rate must equal the control rate".into()));
        }
        self.tick_ratios()?;
        let f = &self.failure;
        {
            if !(1..=4).contains(&f.rotor) {
                return Err(Error::InvalidRotor(f.rotor));
            }
            if !(f.time >= 0.0) {
                return Err(Error::Config("failure time must be non-negative".into()));
            }
        }
        if !(self.transient >= 0.0) {
            return Err(Error::Config("transient must be non-negative".into()));
        }
        let s = &self.setpoints;
        if !(s.step > 0.0 && s.side >= 0.0) {
            return Err(Error::Config("setpoint step must be positive".into()));
        }
        if self.landmarks.count == 0 || !(self.landmarks.extent > 0.0) {
            return Err(Error::Config("landmark field must be non-empty".into()));
        }
        self.quadrotor.validate()?;
        self.gains.validate()?;
        self.imu.validate()?;
        self.camera.validate()?;
        self.filter.validate()?;
        self.vio.validate()?;
        self.degradation()?.validate()?;
        Ok(())
    }
}
