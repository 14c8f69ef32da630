//! Immutable traffic snapshot with neighbor lookups and decision-context
//! construction, shared by the simulator and the trajectory observer.

use crate::carfollow::{CarFollowModel, IdmParams};
use crate::incentives::{EgoState, IncentiveContext, LaneStats, Neighbor, RelatedVehicle, RouteTimes};
use crate::mobil::{Follower, MobilCandidate};
use crate::network::{remaining_distance, LaneIdx, Network, SectionIdx};

use super::nav::{Navigator, UNREACHABLE_S};

/// Leaders and followers are searched at most this far, m.
pub const LOOKAHEAD_M: f64 = 200.0;
/// Lane statistics window, centered on the ego vehicle, m.
pub const STATS_WINDOW_M: f64 = 200.0;
/// Vehicles this far ahead that need the ego lane count as related, m.
pub const MERGE_LOOKAHEAD_M: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct VehView {
    pub id: u64,
    pub lane: LaneIdx,
    /// Front bumper position along the lane, m.
    pub position: f64,
    pub speed: f64,
    pub length: f64,
    pub desired_speed: f64,
    pub cf: CarFollowModel,
    pub idm: IdmParams,
    pub route_next: Option<SectionIdx>,
    pub destination: SectionIdx,
    /// Live travel time of the planned route after the current section, s.
    pub planned_remainder: f64,
}

/// A neighboring vehicle found by a lookup, with the bumper gap to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Found {
    pub idx: usize,
    pub gap: f64,
}

pub struct TrafficView<'a> {
    pub net: &'a Network,
    pub vehicles: Vec<VehView>,
    /// Vehicle indices per lane, ascending position.
    pub lanes: Vec<Vec<usize>>,
}

impl<'a> TrafficView<'a> {
    pub fn new(net: &'a Network, vehicles: Vec<VehView>) -> Self {
        let mut lanes = vec![Vec::new(); net.lanes().len()];
        for (i, v) in vehicles.iter().enumerate() {
            lanes[v.lane.0].push(i);
        }
        for l in &mut lanes {
            l.sort_by(|&a, &b| {
                vehicles[a]
                    .position
                    .total_cmp(&vehicles[b].position)
                    .then(vehicles[a].id.cmp(&vehicles[b].id))
            });
        }
        TrafficView { net, vehicles, lanes }
    }

    /// Moves vehicle `i` to `lane` at its current position.
    pub fn move_vehicle(&mut self, i: usize, lane: LaneIdx) {
        let old = self.vehicles[i].lane;
        self.lanes[old.0].retain(|&j| j != i);
        self.vehicles[i].lane = lane;
        let vs = &self.vehicles;
        let key = (vs[i].position, vs[i].id);
        let at = self.lanes[lane.0].partition_point(|&j| (vs[j].position, vs[j].id) < key);
        self.lanes[lane.0].insert(at, i);
    }

    fn pos(&self, i: usize) -> f64 {
        self.vehicles[i].position
    }

    /// Lane a vehicle on `lane` continues onto, following `route_next` when
    /// the lane serves it.
    pub fn continuation(&self, lane: LaneIdx, route_next: Option<SectionIdx>) -> Option<LaneIdx> {
        let l = self.net.lane(lane);
        let next = match route_next {
            Some(n) if l.serves(n) => n,
            _ => *l.successors.first()?,
        };
        Some(self.net.entry_lane(lane, next))
    }

    /// First vehicle strictly ahead of `x` on `lane`, looking one lane
    /// downstream if needed. `skip` excludes one vehicle (the ego).
    pub fn leader_at(
        &self,
        lane: LaneIdx,
        x: f64,
        route_next: Option<SectionIdx>,
        skip: Option<usize>,
    ) -> Option<Found> {
        let list = &self.lanes[lane.0];
        let start = list.partition_point(|&j| self.pos(j) <= x);
        if let Some(&j) = list[start..].iter().find(|&&j| Some(j) != skip) {
            let v = &self.vehicles[j];
            return Some(Found {
                idx: j,
                gap: v.position - v.length - x,
            });
        }
        let rest = self.net.lane(lane).length - x;
        if rest > LOOKAHEAD_M {
            return None;
        }
        let next = self.continuation(lane, route_next)?;
        let &j = self.lanes[next.0].iter().find(|&&j| Some(j) != skip)?;
        let v = &self.vehicles[j];
        Some(Found {
            idx: j,
            gap: rest + v.position - v.length,
        })
    }

    /// Last vehicle at or behind `x` on `lane`, looking into upstream lanes if
    /// needed. The gap is measured to a rear bumper at `x - ego_length`.
    pub fn follower_at(&self, lane: LaneIdx, x: f64, ego_length: f64, skip: Option<usize>) -> Option<Found> {
        let list = &self.lanes[lane.0];
        let end = list.partition_point(|&j| self.pos(j) <= x);
        if let Some(&j) = list[..end].iter().rev().find(|&&j| Some(j) != skip) {
            return Some(Found {
                idx: j,
                gap: x - ego_length - self.pos(j),
            });
        }
        let mut best: Option<Found> = None;
        for &p in self.net.predecessors(lane) {
            let len = self.net.lane(p).length;
            if let Some(&j) = self.lanes[p.0].iter().rev().find(|&&j| Some(j) != skip) {
                let gap = x - ego_length + len - self.pos(j);
                if gap <= LOOKAHEAD_M && best.is_none_or(|b| gap < b.gap) {
                    best = Some(Found { idx: j, gap });
                }
            }
        }
        best
    }

    /// Leader of vehicle `i` in its own lane.
    pub fn leader(&self, i: usize) -> Option<Found> {
        let v = &self.vehicles[i];
        self.leader_at(v.lane, v.position, v.route_next, Some(i))
    }

    /// Vehicle just ahead of `i` in zipper order on another lane that feeds
    /// the same downstream lane. Merge order is distance to the lane end,
    /// then id. The gap is virtual and may be negative.
    pub fn merge_leader(&self, i: usize) -> Option<Found> {
        let v = &self.vehicles[i];
        self.merge_leader_at(v.lane, v.position, v.route_next, v.id)
    }

    /// Competitors on the other feeders of the lane that `lane` continues
    /// onto, with their distance to the end of their own lane.
    fn merge_competitors(&self, lane: LaneIdx, route_next: Option<SectionIdx>) -> Vec<(LaneIdx, f64)> {
        let Some(next) = self.continuation(lane, route_next) else {
            return Vec::new();
        };
        self.net
            .predecessors(next)
            .iter()
            .filter(|&&p| p != lane)
            .map(|&p| (p, self.net.lane(p).length))
            .collect()
    }

    fn continues_onto(&self, j: usize, p: LaneIdx, lane: LaneIdx, route_next: Option<SectionIdx>) -> bool {
        self.continuation(p, self.vehicles[j].route_next) == self.continuation(lane, route_next)
    }

    pub fn merge_leader_at(&self, lane: LaneIdx, x: f64, route_next: Option<SectionIdx>, id: u64) -> Option<Found> {
        let rest = self.net.lane(lane).length - x;
        if rest > LOOKAHEAD_M {
            return None;
        }
        let mut best: Option<(f64, Found)> = None;
        for (p, len) in self.merge_competitors(lane, route_next) {
            // Rear to front: the first vehicle ahead in order is the nearest.
            for &j in &self.lanes[p.0] {
                let w = &self.vehicles[j];
                let d = len - w.position;
                if w.id == id || d > rest || d == rest && w.id > id || !self.continues_onto(j, p, lane, route_next) {
                    continue;
                }
                if best.is_none_or(|(bd, _)| d > bd) {
                    best = Some((
                        d,
                        Found {
                            idx: j,
                            gap: rest - d - w.length,
                        },
                    ));
                }
                break;
            }
        }
        best.map(|b| b.1)
    }

    /// Vehicle just behind a vehicle at `x` on `lane` in zipper order; the
    /// virtual gap is measured to a rear bumper at `x - length`.
    pub fn merge_follower_at(
        &self,
        lane: LaneIdx,
        x: f64,
        length: f64,
        route_next: Option<SectionIdx>,
        id: u64,
    ) -> Option<Found> {
        let rest = self.net.lane(lane).length - x;
        if rest > LOOKAHEAD_M {
            return None;
        }
        let mut best: Option<(f64, Found)> = None;
        for (p, len) in self.merge_competitors(lane, route_next) {
            // Front to rear: the first vehicle behind in order is the nearest.
            for &j in self.lanes[p.0].iter().rev() {
                let w = &self.vehicles[j];
                let d = len - w.position;
                if w.id == id || d < rest || d == rest && w.id < id || !self.continues_onto(j, p, lane, route_next) {
                    continue;
                }
                if d > LOOKAHEAD_M {
                    break;
                }
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((
                        d,
                        Found {
                            idx: j,
                            gap: d - rest - length,
                        },
                    ));
                }
                break;
            }
        }
        best.map(|b| b.1)
    }

    pub fn follower(&self, i: usize) -> Option<Found> {
        let v = &self.vehicles[i];
        self.follower_at(v.lane, v.position, v.length, Some(i))
    }

    /// Statistics of `lane` in a window around `x`, excluding `skip`.
    pub fn lane_stats(&self, lane: LaneIdx, x: f64, skip: Option<usize>) -> LaneStats {
        let len = self.net.lane(lane).length;
        let (lo, hi) = if len <= STATS_WINDOW_M {
            (f64::NEG_INFINITY, f64::INFINITY)
        } else {
            let lo = (x - STATS_WINDOW_M / 2.0).clamp(0.0, len - STATS_WINDOW_M);
            (lo, lo + STATS_WINDOW_M)
        };
        let list = &self.lanes[lane.0];
        let a = list.partition_point(|&j| self.pos(j) < lo);
        let b = list.partition_point(|&j| self.pos(j) <= hi);
        let pairs: Vec<(f64, f64)> = list[a..b]
            .iter()
            .filter(|&&j| Some(j) != skip)
            .map(|&j| (self.vehicles[j].position, self.vehicles[j].speed))
            .collect();
        LaneStats::from_sorted(&pairs, len.min(STATS_WINDOW_M))
    }

    /// Remaining travel time to the destination after leaving `lane`.
    pub fn route_time_via(&self, nav: &Navigator, i: usize, lane: LaneIdx) -> f64 {
        let v = &self.vehicles[i];
        let l = self.net.lane(lane);
        if l.is_terminal() {
            return if l.section == v.destination { 0.0 } else { UNREACHABLE_S };
        }
        match v.route_next {
            Some(n) if l.serves(n) => v.planned_remainder,
            _ => l
                .successors
                .iter()
                .map(|s| nav.to_dest(*s, v.destination))
                .fold(UNREACHABLE_S, f64::min),
        }
    }

    fn neighbor(&self, f: Option<Found>) -> Option<Neighbor> {
        f.map(|f| Neighbor {
            gap: f.gap,
            speed: self.vehicles[f.idx].speed,
        })
    }

    /// Vehicles whose speed the maneuver of `i` into `target` affects.
    /// Successors count only when the ego is slower than its lane (it is the
    /// one blocking them); merging vehicles always count.
    fn related(
        &self,
        i: usize,
        target: LaneIdx,
        leader: Option<Found>,
        tl: Option<Found>,
        tf: Option<Found>,
        blocking: bool,
    ) -> Vec<RelatedVehicle> {
        let ego = &self.vehicles[i];
        let eq = |j: usize, gap: f64| self.vehicles[j].cf.equilibrium_speed(gap);
        let mut out = Vec::new();
        let mut seen: Vec<usize> = Vec::new();
        let (old_f, new_f) = if blocking { (self.follower(i), tf) } else { (None, None) };
        if let Some(f) = old_f {
            let after = leader.map_or(f64::INFINITY, |l| f.gap + ego.length + l.gap);
            out.push(RelatedVehicle {
                speed: eq(f.idx, f.gap.max(0.0)),
                speed_after: eq(f.idx, after.max(0.0)),
                desired_speed: self.vehicles[f.idx].desired_speed,
            });
            seen.push(f.idx);
        }
        if let Some(f) = new_f {
            if !seen.contains(&f.idx) {
                let before = tl.map_or(f64::INFINITY, |l| f.gap + ego.length + l.gap);
                out.push(RelatedVehicle {
                    speed: eq(f.idx, before.max(0.0)),
                    speed_after: eq(f.idx, f.gap.max(0.0)),
                    desired_speed: self.vehicles[f.idx].desired_speed,
                });
                seen.push(f.idx);
            }
        }
        // Vehicles just ahead on a neighbor lane that need the ego lane get
        // room to merge once the ego leaves it.
        let lane = self.net.lane(ego.lane);
        for side in [lane.left, lane.right].into_iter().flatten() {
            let list = &self.lanes[side.0];
            let a = list.partition_point(|&j| self.pos(j) <= ego.position);
            for &m in &list[a..] {
                let mv = &self.vehicles[m];
                if mv.position - ego.position > MERGE_LOOKAHEAD_M {
                    break;
                }
                if seen.contains(&m) || side == target && Some(m) == tl.map(|t| t.idx) {
                    continue;
                }
                let needs = matches!(mv.route_next, Some(n) if !self.net.lane(side).serves(n) && lane.serves(n));
                if !needs {
                    continue;
                }
                let here = self.leader_at(side, mv.position, mv.route_next, Some(m));
                let there = self.leader_at(ego.lane, mv.position, mv.route_next, Some(i));
                out.push(RelatedVehicle {
                    speed: eq(m, here.map_or(f64::INFINITY, |f| f.gap.max(0.0))),
                    speed_after: eq(m, there.map_or(f64::INFINITY, |f| f.gap.max(0.0))),
                    desired_speed: mv.desired_speed,
                });
                seen.push(m);
            }
        }
        out
    }

    /// Decision context for vehicle `i` moving to `target`, or `None` when
    /// the ego would overlap a vehicle there.
    pub fn incentive_context(&self, nav: &Navigator, i: usize, target: LaneIdx) -> Option<IncentiveContext> {
        let v = &self.vehicles[i];
        let tl = self.leader_at(target, v.position, v.route_next, Some(i));
        let tf = self.follower_at(target, v.position, v.length, Some(i));
        if tl.is_some_and(|f| f.gap < 0.0) || tf.is_some_and(|f| f.gap < 0.0) {
            return None;
        }
        let leader = self.leader(i);
        let lane = self.net.lane(v.lane);
        let current = self.lane_stats(v.lane, v.position, None);
        let blocking = v.speed < current.mean_speed;
        Some(IncentiveContext {
            ego: EgoState {
                speed: v.speed,
                desired_speed: v.desired_speed,
                length: v.length,
                cf: v.cf,
            },
            relation: self.net.lane_relation(v.lane, target, v.route_next),
            remaining_m: remaining_distance(lane, v.position),
            current,
            target: Some(self.lane_stats(target, v.position, Some(i))),
            current_leader: self.neighbor(leader),
            target_leader: self.neighbor(tl),
            target_follower: self.neighbor(tf),
            related: self.related(i, target, leader, tl, tf, blocking),
            route: RouteTimes {
                via_current: self.route_time_via(nav, i, v.lane),
                via_target: self.route_time_via(nav, i, target),
            },
        })
    }

    pub fn mobil_candidate(&self, i: usize, target: LaneIdx) -> Option<MobilCandidate> {
        let v = &self.vehicles[i];
        let tl = self.leader_at(target, v.position, v.route_next, Some(i));
        let tf = self.follower_at(target, v.position, v.length, Some(i));
        if tl.is_some_and(|f| f.gap < 0.0) || tf.is_some_and(|f| f.gap < 0.0) {
            return None;
        }
        let leader = self.leader(i);
        let ego_as = |gap: f64| Neighbor { gap, speed: v.speed };
        let old_follower = self.follower(i).map(|f| Follower {
            idm: self.vehicles[f.idx].idm,
            speed: self.vehicles[f.idx].speed,
            before: Some(ego_as(f.gap)),
            after: leader.map(|l| Neighbor {
                gap: f.gap + v.length + l.gap,
                speed: self.vehicles[l.idx].speed,
            }),
        });
        let new_follower = tf.map(|f| Follower {
            idm: self.vehicles[f.idx].idm,
            speed: self.vehicles[f.idx].speed,
            before: tl.map(|l| Neighbor {
                gap: f.gap + v.length + l.gap,
                speed: self.vehicles[l.idx].speed,
            }),
            after: Some(ego_as(f.gap)),
        });
        Some(MobilCandidate {
            target,
            to_right: self.net.lane(v.lane).right == Some(target),
            ego_idm: v.idm,
            ego_speed: v.speed,
            current_leader: self.neighbor(leader),
            target_leader: self.neighbor(tl),
            old_follower,
            new_follower,
        })
    }

    /// Left and right neighbor lanes of vehicle `i`.
    pub fn neighbor_lanes(&self, i: usize) -> impl Iterator<Item = LaneIdx> + '_ {
        let l = self.net.lane(self.vehicles[i].lane);
        [l.left, l.right].into_iter().flatten()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::fixtures::FIG1;

    fn veh(net: &Network, id: u64, lane: &str, pos: f64, speed: f64) -> VehView {
        let cf = CarFollowModel::builtin("idm").unwrap().with_desired_speed(15.0);
        VehView {
            id,
            lane: net.lane_idx(lane).unwrap(),
            position: pos,
            speed,
            length: 5.0,
            desired_speed: 15.0,
            cf,
            idm: IdmParams {
                v0: 15.0,
                ..IdmParams::default()
            },
            route_next: Some(net.section_idx("straight_on").unwrap()),
            destination: net.section_idx("straight_on").unwrap(),
            planned_remainder: 200.0 / 13.9,
        }
    }

    #[test]
    fn neighbors_and_gaps() {
        let net = Network::from_json_str(FIG1).unwrap();
        let vs = vec![
            veh(&net, 1, "C", 100.0, 10.0),
            veh(&net, 2, "C", 140.0, 8.0),
            veh(&net, 3, "B", 120.0, 12.0),
            veh(&net, 4, "S", 30.0, 12.0),
            veh(&net, 5, "C", 350.0, 9.0),
        ];
        let view = TrafficView::new(&net, vs);
        let l = view.leader(0).unwrap();
        assert_eq!((l.idx, l.gap), (1, 35.0));
        assert!(view.follower(0).is_none());
        // Crosses into the downstream lane.
        let l = view.leader(4).unwrap();
        assert_eq!((l.idx, l.gap), (3, 150.0 + 25.0));
        assert_eq!(view.leader(1), Some(Found { idx: 4, gap: 205.0 }));
        let b = net.lane_idx("B").unwrap();
        let tl = view.leader_at(b, 100.0, None, Some(0)).unwrap();
        assert_eq!((tl.idx, tl.gap), (2, 15.0));
        let s = net.lane_idx("S").unwrap();
        let f = view.follower_at(s, 30.0, 5.0, Some(3)).unwrap();
        assert_eq!((f.idx, f.gap), (4, 175.0));

        let ctx = view.incentive_context(&Navigator::new(&net), 0, b).unwrap();
        assert_eq!(ctx.current_leader.unwrap().gap, 35.0);
        assert_eq!(ctx.target_leader.unwrap().gap, 15.0);
        assert!(ctx.target_follower.is_none());
        assert_eq!(ctx.remaining_m, 400.0);
        assert_eq!(ctx.route.via_current, ctx.route.via_target);
        assert_eq!(ctx.current.count, 2);
        assert_eq!(ctx.target.unwrap().count, 1);
    }

    #[test]
    fn overlap_blocks_candidate() {
        let net = Network::from_json_str(FIG1).unwrap();
        let view = TrafficView::new(
            &net,
            vec![veh(&net, 1, "C", 100.0, 10.0), veh(&net, 2, "B", 102.0, 10.0)],
        );
        assert!(view
            .incentive_context(&Navigator::new(&net), 0, net.lane_idx("B").unwrap())
            .is_none());
        assert!(view.mobil_candidate(0, net.lane_idx("B").unwrap()).is_none());
    }

    #[test]
    fn zipper_order_across_feeders() {
        let net = Network::from_json_str(
            r#"{"sections": [{"id": "A", "entrance": true}, {"id": "D"}],
                "lanes": [
                  {"id": "Ar", "section": "A", "length_m": 300, "left": "Al", "successors": ["D"], "speed_limit_mps": 15},
                  {"id": "Al", "section": "A", "length_m": 300, "right": "Ar", "successors": ["D"], "speed_limit_mps": 15},
                  {"id": "D", "section": "D", "length_m": 300, "speed_limit_mps": 15}]}"#,
        )
        .unwrap();
        let d = net.section_idx("D").unwrap();
        let mk = |id, lane, pos| VehView {
            id,
            lane: net.lane_idx(lane).unwrap(),
            position: pos,
            speed: 10.0,
            length: 5.0,
            desired_speed: 15.0,
            cf: CarFollowModel::builtin("idm").unwrap(),
            idm: IdmParams::default(),
            route_next: Some(d),
            destination: d,
            planned_remainder: 20.0,
        };
        let view = TrafficView::new(
            &net,
            vec![
                mk(1, "Ar", 250.0),
                mk(2, "Al", 270.0),
                mk(3, "Al", 200.0),
                mk(4, "Ar", 50.0),
            ],
        );
        // 1 is 50 m from the end, 2 is 30 m and 3 is 100 m out.
        assert_eq!(view.merge_leader(0), Some(Found { idx: 1, gap: 15.0 }));
        let ar = net.lane_idx("Ar").unwrap();
        assert_eq!(
            view.merge_follower_at(ar, 250.0, 5.0, Some(d), 1),
            Some(Found { idx: 2, gap: 45.0 })
        );
        assert_eq!(view.merge_leader(1), None);
        let al = net.lane_idx("Al").unwrap();
        assert_eq!(
            view.merge_follower_at(al, 270.0, 5.0, Some(d), 2),
            Some(Found { idx: 0, gap: 15.0 })
        );
        // Beyond the lookahead nothing is merged.
        assert_eq!(view.merge_leader(3), None);
        // Equal distances are ordered by id.
        let tie = TrafficView::new(&net, vec![mk(7, "Ar", 250.0), mk(8, "Al", 250.0)]);
        assert_eq!(tie.merge_leader(0), None);
        assert_eq!(tie.merge_leader(1), Some(Found { idx: 0, gap: -5.0 }));
    }
}
