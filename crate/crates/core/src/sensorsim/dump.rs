//! CSV dumps of sensor streams for replay.
//!
//! Columns: IMU `t,gx,gy,gz,ax,ay,az`; range `t,range,valid`; events `t,x,y,p`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Event, ImuSample, RangeSample};
use crate::error::{Error, Result};

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

#[derive(Serialize)]
struct ImuRow {
    t: f64,
    gx: f64,
    gy: f64,
    gz: f64,
    ax: f64,
    ay: f64,
    az: f64,
}

pub fn write_imu_csv<W: Write>(w: W, samples: &[ImuSample]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for s in samples {
        wr.serialize(ImuRow {
            t: s.time,
            gx: s.gyro.x,
            gy: s.gyro.y,
            gz: s.gyro.z,
            ax: s.accel.x,
            ay: s.accel.y,
            az: s.accel.z,
        })
        .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct RangeRow {
    t: f64,
    range: f64,
    valid: u8,
}

pub fn write_range_csv<W: Write>(w: W, samples: &[RangeSample]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for s in samples {
        wr.serialize(RangeRow { t: s.time, range: s.range, valid: s.valid as u8 }).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct EventRow {
    t: f64,
    x: u16,
    y: u16,
    p: i8,
}

pub fn write_events_csv<W: Write>(w: W, events: &[Event]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for e in events {
        wr.serialize(EventRow { t: e.time, x: e.pixel[0], y: e.pixel[1], p: e.polarity }).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads an event dump. Sources are not stored, so every event gets source 0.
pub fn read_events_csv<R: Read>(r: R) -> Result<Vec<Event>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize::<EventRow>()
        .map(|row| {
            let row = row.map_err(csv_err)?;
            Ok(Event { time: row.t, pixel: [row.x, row.y], polarity: row.p, source: 0 })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn events_round_trip() {
        let ev = vec![
            Event { time: 0.001, pixel: [3, 4], polarity: 1, source: 0 },
            Event { time: 0.0025, pixel: [345, 239], polarity: -1, source: 0 },
        ];
        let mut buf = Vec::new();
        write_events_csv(&mut buf, &ev).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("t,x,y,p\n"));
        assert_eq!(read_events_csv(buf.as_slice()).unwrap(), ev);
    }

    #[test]
    fn imu_header() {
        let s = ImuSample { time: 0.0, gyro: Vector3::zeros(), accel: Vector3::new(0.0, 0.0, 9.81) };
        let mut buf = Vec::new();
        write_imu_csv(&mut buf, &[s]).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("t,gx,gy,gz,ax,ay,az\n"));
        let mut buf = Vec::new();
        write_range_csv(&mut buf, &[RangeSample { time: 0.0, range: 1.5, valid: true }]).unwrap();
        assert_eq!(String::from_utf8_lossy(&buf), "t,range,valid\n0.0,1.5,1\n");
    }
}
