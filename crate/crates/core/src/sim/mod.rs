//! Microscopic multi-lane simulation.

pub mod io;
pub mod metrics;
pub mod nav;
pub mod scenario;
pub mod view;
pub mod world;

use log::{debug, info};

use crate::error::Result;
use crate::par::Exec;
use metrics::{lane_change_rate, RateBin, Summary, WindowSample};
use scenario::Scenario;
use world::{LaneChangeEvent, TrajPoint, World};

/// Vehicle ids of demand level `k` start at `k * ID_STRIDE`.
pub const ID_STRIDE: u64 = 1_000_000;

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub events: Vec<LaneChangeEvent>,
    pub windows: Vec<WindowSample>,
    pub rates: Vec<RateBin>,
    pub summary: Summary,
    pub trajectories: Vec<TrajPoint>,
    /// Road length of the measurement region, km.
    pub dx_km: f64,
}

struct LevelOutput {
    events: Vec<LaneChangeEvent>,
    windows: Vec<WindowSample>,
    summary: Summary,
    trajectories: Vec<TrajPoint>,
    totals: (f64, u64, f64),
}

fn run_level(sc: &Scenario, k: usize, demand: f64, exec: Exec) -> Result<LevelOutput> {
    let seed = sc.seed.wrapping_add(k as u64);
    let mut w = World::new(sc, demand, seed, k as u64 * ID_STRIDE, exec)?;
    let steps = (sc.duration_s / sc.dt_s).round() as u64;
    for s in 0..steps {
        w.step()?;
        if s % 6000 == 0 {
            debug!("level {k} t={:.0}s vehicles={}", w.t, w.vehicles().len());
        }
    }
    w.check()?;
    let summary = w.summary();
    info!(
        "demand {demand:.0} veh/h: spawned {} exited {} lane changes {}",
        summary.spawned, summary.exited, summary.lane_changes
    );
    Ok(LevelOutput {
        windows: w.windows.finish(sc.duration_s),
        totals: w.totals(),
        events: w.events,
        trajectories: w.trajectories,
        summary,
    })
}

/// Runs every demand level of the scenario with the default executor.
pub fn run(sc: &Scenario) -> Result<RunOutput> {
    run_with(sc, Exec::default())
}

/// Demand levels and per-vehicle phases run through `exec`. Results are
/// collected in order, so they do not depend on `exec`.
pub fn run_with(sc: &Scenario, exec: Exec) -> Result<RunOutput> {
    sc.validate()?;
    let levels: Vec<(usize, f64)> = sc.demand_levels.iter().copied().enumerate().collect();
    let outs = exec.map(&levels, |&(k, d)| run_level(sc, k, d, exec));
    let dx_km = sc.network.road_length_km(&sc.region);
    let mut out = RunOutput {
        dx_km,
        ..RunOutput::default()
    };
    let (mut speed_sum, mut speed_n, mut tt_sum) = (0.0, 0u64, 0.0);
    for o in outs {
        let o = o?;
        out.events.extend(o.events);
        out.windows.extend(o.windows);
        out.trajectories.extend(o.trajectories);
        let s = &mut out.summary;
        s.spawned += o.summary.spawned;
        s.exited += o.summary.exited;
        s.exited_off_route += o.summary.exited_off_route;
        s.active += o.summary.active;
        s.queued += o.summary.queued;
        s.lane_changes += o.summary.lane_changes;
        speed_sum += o.totals.0;
        speed_n += o.totals.1;
        tt_sum += o.totals.2;
    }
    if speed_n > 0 {
        out.summary.mean_speed_mps = speed_sum / speed_n as f64;
    }
    if out.summary.exited > 0 {
        out.summary.mean_travel_time_s = tt_sum / out.summary.exited as f64;
    }
    out.rates = lane_change_rate(&out.windows, dx_km, sc.measurement.bin_width_veh_km);
    Ok(out)
}
