//! CSV output of run results.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::Network;

use super::metrics::RateBin;
use super::world::{LaneChangeEvent, TrajPoint};

/// Headers are written explicitly so that empty outputs still carry one.
pub(crate) fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::file(path, e.to_string()))?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics(path: &Path, rates: &[RateBin]) -> Result<()> {
    write_rows(
        path,
        &["bin_density_veh_km", "events", "dx_km", "dt_h", "rate_per_km_h"],
        rates,
    )
}

#[derive(Serialize)]
struct EventRow<'a> {
    time_s: f64,
    vehicle_id: u64,
    from_lane: &'a str,
    to_lane: &'a str,
    #[serde(rename = "G")]
    g: f64,
    classification: &'a str,
}

pub fn write_events(path: &Path, net: &Network, events: &[LaneChangeEvent]) -> Result<()> {
    let rows = events.iter().map(|e| EventRow {
        time_s: round_time(e.time),
        vehicle_id: e.vehicle_id,
        from_lane: &net.lane(e.from_lane).id,
        to_lane: &net.lane(e.to_lane).id,
        g: e.g,
        classification: e.classification.as_str(),
    });
    write_rows(
        path,
        &["time_s", "vehicle_id", "from_lane", "to_lane", "G", "classification"],
        rows,
    )
}

const TRAJECTORY_COLUMNS: [&str; 6] = [
    "time_s",
    "vehicle_id",
    "lane_id",
    "position_m",
    "speed_mps",
    "accel_mps2",
];

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct TrajectoryRow {
    pub time_s: f64,
    pub vehicle_id: u64,
    pub lane_id: String,
    pub position_m: f64,
    pub speed_mps: f64,
    pub accel_mps2: f64,
}

/// Step times are multiples of dt; this strips float noise from them.
fn round_time(t: f64) -> f64 {
    (t * 1e6).round() / 1e6
}

pub fn trajectory_rows(net: &Network, points: &[TrajPoint]) -> Vec<TrajectoryRow> {
    points
        .iter()
        .map(|p| TrajectoryRow {
            time_s: round_time(p.time),
            vehicle_id: p.vehicle_id,
            lane_id: net.lane(p.lane).id.clone(),
            position_m: p.position,
            speed_mps: p.speed,
            accel_mps2: p.accel,
        })
        .collect()
}

pub fn write_trajectories(path: &Path, rows: &[TrajectoryRow]) -> Result<()> {
    write_rows(path, &TRAJECTORY_COLUMNS, rows)
}

pub fn read_trajectories(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::file(path, e.to_string()))?;
    let headers = r.headers()?.clone();
    let want = TRAJECTORY_COLUMNS;
    if headers.iter().ne(want.iter().copied()) {
        return Err(Error::file(
            path,
            format!(
                "expected columns {}, found {}",
                want.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::file(path, format!("row {}: {e}", i + 2))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_header_even_when_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_trajectories(&p, &[]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 1);
        assert!(read_trajectories(&p).unwrap().is_empty());

        let row = TrajectoryRow {
            time_s: 0.1,
            vehicle_id: 3,
            lane_id: "L".into(),
            position_m: 1.5,
            speed_mps: 2.0,
            accel_mps2: -0.5,
        };
        write_trajectories(&p, std::slice::from_ref(&row)).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 2);
        assert_eq!(read_trajectories(&p).unwrap(), vec![row]);
    }
}
