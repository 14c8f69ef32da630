//! Lane-change rate by density and run summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// One measurement window: mean density and lane changes inside it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    /// veh/km per lane
    pub density: f64,
    pub events: u64,
    pub duration_s: f64,
}

/// One row of the r(rho) table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBin {
    /// Bin center, veh/km.
    pub bin_density_veh_km: f64,
    pub events: u64,
    pub dx_km: f64,
    pub dt_h: f64,
    pub rate_per_km_h: f64,
}

/// `n / (dx * dt)`, events per km and hour.
pub fn rate(events: u64, dx_km: f64, dt_h: f64) -> f64 {
    if events == 0 {
        return 0.0;
    }
    events as f64 / (dx_km * dt_h)
}

/// Bins windows by mean density. Bins without windows are omitted; bins with
/// windows but no lane changes report a zero rate.
pub fn lane_change_rate(windows: &[WindowSample], dx_km: f64, bin_width: f64) -> Vec<RateBin> {
    let mut bins: BTreeMap<i64, (u64, f64)> = BTreeMap::new();
    for w in windows {
        let b = (w.density / bin_width).floor() as i64;
        let e = bins.entry(b).or_default();
        e.0 += w.events;
        e.1 += w.duration_s;
    }
    bins.into_iter()
        .map(|(b, (events, secs))| {
            let dt_h = secs / 3600.0;
            RateBin {
                bin_density_veh_km: (b as f64 + 0.5) * bin_width,
                events,
                dx_km,
                dt_h,
                rate_per_km_h: rate(events, dx_km, dt_h),
            }
        })
        .collect()
}

/// Accumulates density samples and events into fixed windows.
#[derive(Debug, Clone)]
pub struct WindowAccumulator {
    window_s: f64,
    density_sum: Vec<f64>,
    samples: Vec<u64>,
    events: Vec<u64>,
}

impl WindowAccumulator {
    pub fn new(window_s: f64) -> Self {
        WindowAccumulator {
            window_s,
            density_sum: Vec::new(),
            samples: Vec::new(),
            events: Vec::new(),
        }
    }

    fn slot(&mut self, t: f64) -> usize {
        let k = (t / self.window_s).floor().max(0.0) as usize;
        if k >= self.samples.len() {
            self.density_sum.resize(k + 1, 0.0);
            self.samples.resize(k + 1, 0);
            self.events.resize(k + 1, 0);
        }
        k
    }

    pub fn add_density(&mut self, t: f64, density: f64) {
        let k = self.slot(t);
        self.density_sum[k] += density;
        self.samples[k] += 1;
    }

    pub fn add_event(&mut self, t: f64) {
        let k = self.slot(t);
        self.events[k] += 1;
    }

    /// Closed windows up to `duration_s`; the last one may be partial.
    pub fn finish(&self, duration_s: f64) -> Vec<WindowSample> {
        (0..self.samples.len())
            .filter(|&k| self.samples[k] > 0)
            .map(|k| {
                let start = k as f64 * self.window_s;
                WindowSample {
                    density: self.density_sum[k] / self.samples[k] as f64,
                    events: self.events[k],
                    duration_s: (duration_s - start).clamp(0.0, self.window_s),
                }
            })
            .collect()
    }

    pub fn unsampled_events(&self) -> u64 {
        (0..self.samples.len())
            .filter(|&k| self.samples[k] == 0)
            .map(|k| self.events[k])
            .sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub spawned: u64,
    pub exited: u64,
    /// Vehicles that left the network at an exit other than their destination.
    pub exited_off_route: u64,
    pub active: u64,
    pub queued: u64,
    pub lane_changes: u64,
    pub mean_speed_mps: f64,
    pub mean_travel_time_s: f64,
    pub negative_gap_violations: u64,
}
