use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scoring phase of a trace row.
pub const PHASE_PRE_FAILURE: u8 = 0;
pub const PHASE_TRANSIENT: u8 = 1;
pub const PHASE_SCORED: u8 = 2;

/// One control-rate sample of a closed-loop run. CSV columns follow the
/// field order below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// Simulation time (s).
    pub t: f64,
    /// 0 before the failure, 1 during the transient, 2 when scored.
    pub phase: u8,
    /// True c.g. position, velocity (world, m and m/s).
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    /// True ZYX Euler angles (rad).
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    /// True body rates (rad/s).
    pub wx: f64,
    pub wy: f64,
    pub wz: f64,
    /// Active position setpoint (m).
    pub sp_x: f64,
    pub sp_y: f64,
    pub sp_z: f64,
    /// State fed to the controller.
    pub est_x: f64,
    pub est_y: f64,
    pub est_z: f64,
    pub est_vx: f64,
    pub est_vy: f64,
    pub est_vz: f64,
    pub est_roll: f64,
    pub est_pitch: f64,
    pub est_yaw: f64,
    /// Complementary filter outputs in both modes (rad).
    pub cf_corrected_roll: f64,
    pub cf_corrected_pitch: f64,
    pub cf_standard_roll: f64,
    pub cf_standard_pitch: f64,
    /// Commanded rotor thrusts (N).
    pub u1: f64,
    pub u2: f64,
    pub u3: f64,
    pub u4: f64,
    /// Desired thrust direction (world).
    pub n_x: f64,
    pub n_y: f64,
    pub n_z: f64,
    /// True when a camera frame was processed at this row.
    pub frame: bool,
    pub features: u32,
    pub vio_landmarks: u32,
    pub vio_optimized: bool,
    pub vio_iterations: u32,
    pub vio_cost: f64,
    /// C.g. position of the latest window frame (m).
    pub vio_x: f64,
    pub vio_y: f64,
    pub vio_z: f64,
    /// Fusion filter has gone without VIO updates past its timeout.
    pub degraded: bool,
    /// Empty, `failure:<rotor>` or `crash:<reason>`.
    pub event: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrashRecord {
    pub time: f64,
    pub reason: String,
}

/// Time-ordered rows of one run; a crash truncates the run at its last row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn crash(&self) -> Option<CrashRecord> {
        self.rows.iter().find_map(|r| {
            r.event.strip_prefix("crash:").map(|reason| CrashRecord { time: r.t, reason: reason.to_string() })
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::Trace("trace is empty".into()));
        }
        if let Some(w) = self.rows.windows(2).find(|w| !(w[1].t > w[0].t)) {
            return Err(Error::Trace(format!("timestamps not increasing at t = {}", w[1].t)));
        }
        Ok(())
    }

    pub fn write_csv(&self, w: impl std::io::Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r).map_err(|e| Error::Trace(e.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv(r: impl std::io::Read) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let rows = rd
            .deserialize()
            .collect::<std::result::Result<Vec<TraceRow>, _>>()
            .map_err(|e| Error::Trace(e.to_string()))?;
        let t = Trace { rows };
        t.validate()?;
        Ok(t)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn row(t: f64) -> TraceRow {
        TraceRow {
            t,
            phase: PHASE_SCORED,
            x: 0.0,
            y: 0.0,
            z: 1.5,
            vx: 0.0,
            vy: 0.0,
            vz: 0.0,
            roll: 0.0,
            pitch: 0.0,
            yaw: 0.0,
            wx: 0.0,
            wy: 0.0,
            wz: 0.0,
            sp_x: 0.0,
            sp_y: 0.0,
            sp_z: 1.5,
            est_x: 0.0,
            est_y: 0.0,
            est_z: 1.5,
            est_vx: 0.0,
            est_vy: 0.0,
            est_vz: 0.0,
            est_roll: 0.0,
            est_pitch: 0.0,
            est_yaw: 0.0,
            cf_corrected_roll: 0.0,
            cf_corrected_pitch: 0.0,
            cf_standard_roll: 0.0,
            cf_standard_pitch: 0.0,
            u1: 1.0,
            u2: 1.0,
            u3: 1.0,
            u4: 1.0,
            n_x: 0.0,
            n_y: 0.0,
            n_z: 1.0,
            frame: false,
            features: 0,
            vio_landmarks: 0,
            vio_optimized: false,
            vio_iterations: 0,
            vio_cost: 0.0,
            vio_x: 0.0,
            vio_y: 0.0,
            vio_z: 1.5,
            degraded: false,
            event: String::new(),
        }
    }

    #[test]
    fn csv_round_trip() {
        let mut rows: Vec<TraceRow> = (0..5).map(|k| row(k as f64 * 0.005)).collect();
        rows[2].event = "failure:4".into();
        rows[4].event = "crash:ground".into();
        rows[3].vio_cost = 0.123456789012345;
        let t = Trace { rows };
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,phase,x,y,z,vx"));
        let back = Trace::read_csv(&buf[..]).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.crash(), Some(CrashRecord { time: 0.02, reason: "ground".into() }));
    }

    #[test]
    fn non_monotone_time_is_rejected() {
        let t = Trace { rows: vec![row(0.0), row(0.0)] };
        assert!(t.validate().is_err());
        assert!(Trace::default().validate().is_err());
    }
}
