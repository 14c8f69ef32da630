//! Decision samples and back labels from trajectories.
//!
//! An observer rebuilds the traffic around each vehicle once per second and
//! evaluates every neighbor lane with the same context builder the simulator
//! uses. Drivers are modeled with IDM at their highest observed speed, and
//! their destination is the last section they were seen on.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::carfollow::{CarFollowModel, IdmParams};
use crate::decision::{evaluate, DrivingStyle};
use crate::error::{Error, Result};
use crate::network::{remaining_distance, LaneIdx, LaneRelation, Network, SectionIdx};
use crate::sim::io::TrajectoryRow;
use crate::sim::nav::Navigator;
use crate::sim::view::{TrafficView, VehView};

use super::{BackLabel, DecisionSample};

/// Sampling intervals may vary by this much, s.
pub const INTERVAL_TOLERANCE_S: f64 = 1e-3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractOptions {
    /// Prob-back coefficient used for the route and comfort features.
    pub alpha: f64,
    /// Share of vehicles tagged aggressive, by relative speed.
    pub aggressive_share: f64,
    pub decision_interval_s: f64,
    pub vehicle_length_m: f64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            alpha: 0.058,
            aggressive_share: 1.0 / 8.4,
            decision_interval_s: 1.0,
            vehicle_length_m: 5.0,
        }
    }
}

/// A lateral move seen in the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservedChange {
    pub time_s: f64,
    pub vehicle_id: u64,
    pub from: LaneIdx,
    pub to: LaneIdx,
}

#[derive(Debug, Clone, Default)]
pub struct Extraction {
    pub samples: Vec<DecisionSample>,
    pub back_labels: Vec<BackLabel>,
    pub changes: Vec<ObservedChange>,
    /// Records whose lane id is not in the network.
    pub skipped_records: usize,
    /// Style tag per vehicle.
    pub styles: BTreeMap<u64, String>,
}

#[derive(Debug, Clone, Copy)]
struct Rec {
    /// Milliseconds, used as a join key across vehicles.
    key: i64,
    time: f64,
    lane: LaneIdx,
    position: f64,
    speed: f64,
}

struct Track {
    id: u64,
    recs: Vec<Rec>,
    sections: Vec<SectionIdx>,
    desired_speed: f64,
}

impl Track {
    fn next_section(&self, current: SectionIdx) -> Option<SectionIdx> {
        let k = self.sections.iter().position(|s| *s == current)?;
        self.sections.get(k + 1).copied()
    }

    fn destination(&self) -> SectionIdx {
        *self.sections.last().expect("tracks are non-empty")
    }
}

fn tracks(rows: &[TrajectoryRow], net: &Network) -> Result<(Vec<Track>, usize)> {
    let mut by_id: BTreeMap<u64, Vec<Rec>> = BTreeMap::new();
    let mut skipped = 0;
    for r in rows {
        let Ok(lane) = net.lane_idx(&r.lane_id) else {
            skipped += 1;
            continue;
        };
        by_id.entry(r.vehicle_id).or_default().push(Rec {
            key: (r.time_s * 1000.0).round() as i64,
            time: r.time_s,
            lane,
            position: r.position_m,
            speed: r.speed_mps,
        });
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} records with unknown lane ids");
    }
    let mut out = Vec::new();
    for (id, recs) in by_id {
        if recs.windows(2).any(|w| w[1].time <= w[0].time) {
            return Err(Error::Calibration(format!(
                "vehicle {id}: records are not sorted by time"
            )));
        }
        if let Some(w) = recs.windows(2).next() {
            let dt = w[1].time - w[0].time;
            if let Some(bad) = recs
                .windows(2)
                .find(|w| ((w[1].time - w[0].time) - dt).abs() > INTERVAL_TOLERANCE_S)
            {
                return Err(Error::Calibration(format!(
                    "vehicle {id}: sampling interval changes from {dt} s to {} s at t={}",
                    bad[1].time - bad[0].time,
                    bad[0].time
                )));
            }
        }
        let mut sections: Vec<SectionIdx> = recs.iter().map(|r| net.lane(r.lane).section).collect();
        sections.dedup();
        let desired_speed = recs.iter().map(|r| r.speed).fold(1.0, f64::max);
        out.push(Track {
            id,
            recs,
            sections,
            desired_speed,
        });
    }
    Ok((out, skipped))
}

/// Everyone present at one instant.
struct Snapshot<'a> {
    view: TrafficView<'a>,
    nav: Navigator,
    /// Track index to view index.
    index: HashMap<usize, usize>,
}

fn snapshot<'a>(net: &'a Network, tracks: &[Track], at: &[(usize, usize)], length: f64) -> Snapshot<'a> {
    let mut nav = Navigator::new(net);
    let mut counts = vec![0usize; net.sections().len()];
    for &(t, k) in at {
        counts[net.lane(tracks[t].recs[k].lane).section.0] += 1;
    }
    nav.update(&counts);
    let mut index = HashMap::new();
    let vehicles = at
        .iter()
        .enumerate()
        .map(|(vi, &(t, k))| {
            index.insert(t, vi);
            let tr = &tracks[t];
            let r = tr.recs[k];
            let section = net.lane(r.lane).section;
            let idm = IdmParams {
                v0: tr.desired_speed,
                ..IdmParams::default()
            };
            let route_next = tr.next_section(section);
            let destination = tr.destination();
            VehView {
                id: tr.id,
                lane: r.lane,
                position: r.position,
                speed: r.speed,
                length,
                desired_speed: tr.desired_speed,
                cf: CarFollowModel::Idm(idm),
                idm,
                route_next,
                destination,
                planned_remainder: route_next.map_or(0.0, |n| nav.to_dest(n, destination)),
            }
        })
        .collect();
    Snapshot {
        view: TrafficView::new(net, vehicles),
        nav,
        index,
    }
}

/// Tags the top `share` of vehicles by mean speed relative to their lane.
fn style_tags(tracks: &[Track], by_key: &BTreeMap<i64, Vec<(usize, usize)>>, share: f64) -> Vec<&'static str> {
    let mut rel = vec![(0.0, 0usize); tracks.len()];
    for at in by_key.values() {
        let mut lane_sum: HashMap<LaneIdx, (f64, usize)> = HashMap::new();
        for &(t, k) in at {
            let r = tracks[t].recs[k];
            let e = lane_sum.entry(r.lane).or_default();
            e.0 += r.speed;
            e.1 += 1;
        }
        for &(t, k) in at {
            let r = tracks[t].recs[k];
            let (s, n) = lane_sum[&r.lane];
            let mean = s / n as f64;
            if mean > 0.1 {
                rel[t].0 += r.speed / mean;
                rel[t].1 += 1;
            }
        }
    }
    let score: Vec<f64> = rel
        .iter()
        .map(|&(s, n)| if n > 0 { s / n as f64 } else { 1.0 })
        .collect();
    let mut order: Vec<usize> = (0..tracks.len()).collect();
    order.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(tracks[a].id.cmp(&tracks[b].id)));
    let n_aggr = (share * tracks.len() as f64).round() as usize;
    let mut tags = vec!["conservative"; tracks.len()];
    for &t in order.iter().take(n_aggr) {
        tags[t] = "aggressive";
    }
    tags
}

pub fn extract_events(rows: &[TrajectoryRow], net: &Network, opts: &ExtractOptions) -> Result<Extraction> {
    if !(opts.decision_interval_s > 0.0) || !(0.0..=1.0).contains(&opts.aggressive_share) {
        return Err(Error::Config(
            "decision interval must be > 0 and aggressive share in [0, 1]".into(),
        ));
    }
    let (tracks, skipped_records) = tracks(rows, net)?;
    let mut by_key: BTreeMap<i64, Vec<(usize, usize)>> = BTreeMap::new();
    for (t, tr) in tracks.iter().enumerate() {
        for (k, r) in tr.recs.iter().enumerate() {
            by_key.entry(r.key).or_default().push((t, k));
        }
    }
    let tags = style_tags(&tracks, &by_key, opts.aggressive_share);

    // Decision instants per vehicle: the change instant inside its window,
    // otherwise the first record of the window.
    let mut instants: BTreeMap<i64, Vec<(usize, usize, Option<LaneIdx>)>> = BTreeMap::new();
    let mut changes = Vec::new();
    for (t, tr) in tracks.iter().enumerate() {
        let mut windows: BTreeMap<i64, (usize, Option<LaneIdx>)> = BTreeMap::new();
        for (k, r) in tr.recs.iter().enumerate() {
            let w = (r.time / opts.decision_interval_s + 1e-9).floor() as i64;
            let lateral = tr.recs.get(k + 1).and_then(|n| {
                (n.lane != r.lane && net.lane(n.lane).section == net.lane(r.lane).section).then_some(n.lane)
            });
            if let Some(to) = lateral {
                changes.push(ObservedChange {
                    time_s: r.time,
                    vehicle_id: tr.id,
                    from: r.lane,
                    to,
                });
                windows.insert(w, (k, Some(to)));
            } else {
                windows.entry(w).or_insert((k, None));
            }
        }
        for (k, to) in windows.into_values() {
            instants.entry(tr.recs[k].key).or_default().push((t, k, to));
        }
    }
    changes.sort_by(|a, b| a.time_s.total_cmp(&b.time_s).then(a.vehicle_id.cmp(&b.vehicle_id)));

    let style = DrivingStyle {
        alpha: opts.alpha,
        ..DrivingStyle::conservative()
    };
    let mut samples = Vec::new();
    let mut back_labels = Vec::new();
    for (key, who) in &instants {
        let snap = snapshot(net, &tracks, &by_key[key], opts.vehicle_length_m);
        for &(t, k, to) in who {
            let i = snap.index[&t];
            let r = tracks[t].recs[k];
            for target in snap.view.neighbor_lanes(i).collect::<Vec<_>>() {
                let Some(ctx) = snap.view.incentive_context(&snap.nav, i, target) else {
                    continue;
                };
                let e = evaluate(target, &ctx, &style)?;
                samples.push(DecisionSample {
                    style: tags[t].to_string(),
                    a_route: e.yields.route,
                    b_speed: e.yields.speed,
                    d_courtesy: e.yields.courtesy,
                    th_target: ctx.target.map_or(f64::NAN, |s| s.time_headway),
                    th_current: ctx.current.time_headway,
                    p_back: e.table.p_back,
                    label: u8::from(to == Some(target)),
                });
            }
            if let Some(to) = to {
                if net.lane_relation(r.lane, to, None) == LaneRelation::Asymmetric {
                    let section = net.lane(r.lane).section;
                    let back = tracks[t].recs[k + 1..]
                        .iter()
                        .take_while(|x| net.lane(x.lane).section == section)
                        .any(|x| x.lane == r.lane);
                    back_labels.push(BackLabel {
                        time_headway_s: snap.view.lane_stats(to, r.position, Some(i)).time_headway,
                        remaining_km: remaining_distance(net.lane(r.lane), r.position) / 1000.0,
                        back,
                    });
                }
            }
        }
    }
    let styles = tracks.iter().zip(&tags).map(|(tr, s)| (tr.id, s.to_string())).collect();
    Ok(Extraction {
        samples,
        back_labels,
        changes,
        skipped_records,
        styles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::fixtures::FIG1;

    fn row(t: f64, id: u64, lane: &str, x: f64) -> TrajectoryRow {
        TrajectoryRow {
            time_s: t,
            vehicle_id: id,
            lane_id: lane.into(),
            position_m: x,
            speed_mps: 10.0,
            accel_mps2: 0.0,
        }
    }

    #[test]
    fn one_change_gives_one_positive_sample() {
        let net = Network::from_json_str(FIG1).unwrap();
        let mut rows = Vec::new();
        for s in 0..=40 {
            let t = s as f64;
            let lane = if s <= 30 { "B" } else { "A" };
            rows.push(row(t, 1, lane, 10.0 + 10.0 * t));
        }
        rows.push(row(0.0, 2, "nowhere", 0.0));
        let ex = extract_events(&rows, &net, &ExtractOptions::default()).unwrap();
        let pos: Vec<_> = ex.samples.iter().filter(|s| s.label == 1).collect();
        assert_eq!(pos.len(), 1);
        assert_eq!(ex.changes.len(), 1);
        assert_eq!(ex.changes[0].time_s, 30.0);
        assert_eq!(ex.skipped_records, 1);
        // B to A is asymmetric by successor sets; the vehicle never returns.
        assert_eq!(ex.back_labels.len(), 1);
        assert!(!ex.back_labels[0].back);
    }

    #[test]
    fn no_change_means_no_positive_label() {
        let net = Network::from_json_str(FIG1).unwrap();
        let rows: Vec<_> = (0..20).map(|s| row(s as f64, 1, "B", 5.0 * s as f64)).collect();
        let ex = extract_events(&rows, &net, &ExtractOptions::default()).unwrap();
        assert!(!ex.samples.is_empty());
        assert!(ex.samples.iter().all(|s| s.label == 0));
    }

    #[test]
    fn irregular_sampling_is_rejected() {
        let net = Network::from_json_str(FIG1).unwrap();
        let rows = vec![row(0.0, 1, "B", 0.0), row(1.0, 1, "B", 1.0), row(2.5, 1, "B", 2.0)];
        assert!(extract_events(&rows, &net, &ExtractOptions::default()).is_err());
    }
}
