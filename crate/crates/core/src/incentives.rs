//! Raw incentive terms for a candidate lane change and the safety gate.

use serde::{Deserialize, Serialize};

use crate::carfollow::CarFollowModel;
use crate::error::{Error, Result};
use crate::network::{LaneRelation, RouteSegment};

/// Mean speeds below this are treated as a standing queue.
pub const HEADWAY_SPEED_EPS: f64 = 0.1;
/// Time headway reported for empty or standing lanes, s.
pub const HEADWAY_CAP: f64 = 120.0;
/// Lower bound on time headway in the comfort cost, s.
pub const COMFORT_HEADWAY_FLOOR: f64 = 0.1;
/// Related vehicles closer than this to their desired speed are skipped.
pub const COURTESY_SPEED_EPS: f64 = 0.1;

/// Aggregates over the vehicles of one lane inside an observation window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneStats {
    /// Mean front-to-front spacing, m.
    pub mean_gap: f64,
    pub mean_speed: f64,
    pub time_headway: f64,
    /// veh/km
    pub density: f64,
    /// veh/h
    pub flow: f64,
    pub window_m: f64,
    pub count: usize,
}

impl LaneStats {
    pub fn empty(window_m: f64) -> Self {
        LaneStats {
            mean_gap: 0.0,
            mean_speed: 0.0,
            time_headway: HEADWAY_CAP,
            density: 0.0,
            flow: 0.0,
            window_m,
            count: 0,
        }
    }

    /// Statistics from `(position, speed)` pairs sorted by ascending
    /// position. A single vehicle has no spacing, so the lane counts as empty
    /// for headway purposes.
    pub fn from_sorted(vehicles: &[(f64, f64)], window_m: f64) -> Self {
        let n = vehicles.len();
        if n == 0 {
            return Self::empty(window_m);
        }
        let mean_speed = vehicles.iter().map(|v| v.1).sum::<f64>() / n as f64;
        let density = n as f64 / (window_m / 1000.0);
        let flow = density * mean_speed * 3.6;
        let (mean_gap, time_headway) = if n < 2 {
            (0.0, HEADWAY_CAP)
        } else {
            let d = (vehicles[n - 1].0 - vehicles[0].0) / (n - 1) as f64;
            (d, time_headway(d, mean_speed))
        };
        LaneStats {
            mean_gap,
            mean_speed,
            time_headway,
            density,
            flow,
            window_m,
            count: n,
        }
    }
}

/// Lane time headway `d / v`, capped for standing traffic.
pub fn time_headway(mean_gap: f64, mean_speed: f64) -> f64 {
    if mean_speed < HEADWAY_SPEED_EPS {
        return HEADWAY_CAP;
    }
    (mean_gap / mean_speed).min(HEADWAY_CAP)
}

/// Probability of getting back to the original lane, `1 - exp(-alpha T_h S)`.
pub fn prob_back(alpha: f64, time_headway: f64, remaining: f64) -> f64 {
    let x = alpha * time_headway * remaining;
    if x <= 0.0 {
        return 0.0;
    }
    -(-x).exp_m1()
}

/// Volume-delay travel time `T0 (1 + k1 (q / q_max)^k2)`.
pub fn route_travel_time(seg: &RouteSegment) -> f64 {
    let load = (seg.flow_vph / seg.capacity_vph).powf(seg.k2);
    seg.free_flow_time + seg.free_flow_time * seg.k1 * load
}

pub fn route_time(segments: &[RouteSegment]) -> f64 {
    segments.iter().map(route_travel_time).sum()
}

/// Comfort cost `-T_h^(-beta)`; the scale constant is absorbed into the
/// comfort weight.
pub fn comfort_cost(time_headway: f64, beta: f64) -> f64 {
    -time_headway.max(COMFORT_HEADWAY_FLOOR).powf(-beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyParams {
    pub ttc_threshold: f64,
    /// Minimum physical gap accepted regardless of time to collision, m.
    pub min_gap: f64,
}

impl Default for SafetyParams {
    fn default() -> Self {
        SafetyParams {
            ttc_threshold: 2.0,
            min_gap: 2.0,
        }
    }
}

impl SafetyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.ttc_threshold > 0.0) || !(self.min_gap >= 0.0) {
            return Err(Error::Config("safety needs ttc_threshold > 0 and min_gap >= 0".into()));
        }
        Ok(())
    }
}

/// Gap acceptance against the prospective follower. `closing_speed` is
/// `v_follower - v_ego`.
pub fn safety_ok(gap: f64, closing_speed: f64, p: &SafetyParams) -> Result<bool> {
    if gap < 0.0 {
        return Err(Error::Domain(format!("negative gap {gap} to new follower")));
    }
    if gap < p.min_gap {
        return Ok(false);
    }
    if closing_speed <= 0.0 {
        return Ok(true);
    }
    Ok(gap / closing_speed > p.ttc_threshold)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoState {
    pub speed: f64,
    pub desired_speed: f64,
    pub length: f64,
    pub cf: CarFollowModel,
}

/// A vehicle adjacent to the ego's position in some lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Bumper-to-bumper gap, m.
    pub gap: f64,
    pub speed: f64,
}

/// A vehicle whose speed the maneuver affects, with its car-following
/// prediction before and after the change.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelatedVehicle {
    pub speed: f64,
    pub speed_after: f64,
    pub desired_speed: f64,
}

/// Remaining travel time to the destination beyond the current section.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteTimes {
    /// Via the current lane's downstream connection.
    pub via_current: f64,
    /// Via the target lane's downstream connection.
    pub via_target: f64,
}

/// Everything a driver sees when weighing one candidate lane.
#[derive(Debug, Clone, PartialEq)]
pub struct IncentiveContext {
    pub ego: EgoState,
    pub relation: LaneRelation,
    /// Remaining distance to the decision point, m.
    pub remaining_m: f64,
    pub current: LaneStats,
    pub target: Option<LaneStats>,
    pub current_leader: Option<Neighbor>,
    pub target_leader: Option<Neighbor>,
    pub target_follower: Option<Neighbor>,
    pub related: Vec<RelatedVehicle>,
    pub route: RouteTimes,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectedSpeeds {
    pub current: f64,
    pub after_change: f64,
}

/// Car-following equilibrium speed behind the current and the prospective
/// leader; an absent leader means free road.
pub fn expected_speed(ctx: &IncentiveContext) -> ExpectedSpeeds {
    let gap = |n: Option<Neighbor>| n.map_or(f64::INFINITY, |n| n.gap);
    ExpectedSpeeds {
        current: ctx.ego.cf.equilibrium_speed(gap(ctx.current_leader)),
        after_change: ctx.ego.cf.equilibrium_speed(gap(ctx.target_leader)),
    }
}

/// Relative improvement of one vehicle's distance to its desired speed. A
/// vehicle already at its desired speed is skipped unless the change pushes
/// it away from it; that loss is measured against the tolerance itself.
pub fn courtesy_term(r: &RelatedVehicle) -> Option<f64> {
    let before = (r.speed - r.desired_speed).abs();
    let after = (r.speed_after - r.desired_speed).abs();
    if before < COURTESY_SPEED_EPS {
        if after < COURTESY_SPEED_EPS {
            return None;
        }
        return Some((before - after) / COURTESY_SPEED_EPS);
    }
    Some((before - after) / before)
}

pub fn courtesy_gain(related: &[RelatedVehicle]) -> f64 {
    related.iter().filter_map(courtesy_term).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::carfollow::{IdmParams, OvmParams};
    use crate::network::SectionIdx;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn headway_cases() {
        assert_eq!(time_headway(40.0, 20.0), 2.0);
        assert_eq!(time_headway(40.0, 0.0), HEADWAY_CAP);
        assert_eq!(LaneStats::empty(200.0).time_headway, HEADWAY_CAP);
        assert_eq!(LaneStats::from_sorted(&[(10.0, 5.0)], 200.0).time_headway, HEADWAY_CAP);
        let s = LaneStats::from_sorted(&[(0.0, 20.0), (40.0, 20.0), (80.0, 20.0)], 200.0);
        assert_eq!(s.mean_gap, 40.0);
        assert_eq!(s.time_headway, 2.0);
        assert_eq!(s.density, 15.0);
    }

    #[test]
    fn prob_back_values() {
        assert_eq!(prob_back(0.058, 2.0, 0.0), 0.0);
        // 1 - exp(-1.16), 30-digit reference.
        assert_abs_diff_eq!(prob_back(0.058, 2.0, 10.0), 0.686_513_819_117_394_7, epsilon = 1e-15);
        assert!(prob_back(0.058, 1e6, 10.0) > 1.0 - 1e-12);
    }

    fn seg(q: f64) -> RouteSegment {
        RouteSegment {
            section: SectionIdx(0),
            free_flow_time: 100.0,
            flow_vph: q,
            capacity_vph: 1000.0,
            k1: 0.15,
            k2: 4.0,
        }
    }

    #[test]
    fn bpr_values() {
        assert_eq!(route_travel_time(&seg(0.0)), 100.0);
        assert_eq!(route_travel_time(&seg(1000.0)), 115.0);
        assert_eq!(route_travel_time(&seg(500.0)), 100.9375);
        assert_eq!(route_time(&[seg(0.0), seg(1000.0)]), 215.0);
    }

    #[test]
    fn comfort_values() {
        assert_eq!(comfort_cost(1.0, 1.1), -1.0);
        assert_eq!(comfort_cost(1.0, 2.3), -1.0);
        assert_abs_diff_eq!(comfort_cost(2.0, 2.3), -0.203_063_099_089_058_9, epsilon = 1e-15);
        assert!(comfort_cost(1e9, 1.1).abs() < 1e-9);
        assert_eq!(comfort_cost(0.0, 1.0), comfort_cost(COMFORT_HEADWAY_FLOOR, 1.0));
    }

    #[test]
    fn safety_cases() {
        let p = SafetyParams::default();
        assert!(safety_ok(5.0, -3.0, &p).unwrap());
        assert!(safety_ok(20.0, 5.0, &p).unwrap());
        assert!(!safety_ok(4.0, 4.0, &p).unwrap());
        assert!(!safety_ok(1.0, -3.0, &p).unwrap());
        assert!(safety_ok(-0.1, 0.0, &p).is_err());
    }

    #[test]
    fn courtesy_cases() {
        assert_eq!(courtesy_gain(&[]), 0.0);
        let r = |v, va| RelatedVehicle {
            speed: v,
            speed_after: va,
            desired_speed: 15.0,
        };
        assert_abs_diff_eq!(courtesy_gain(&[r(10.0, 13.0)]), 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(courtesy_gain(&[r(13.0, 10.0)]), -1.5, epsilon = 1e-15);
        // Already at desired speed: skipped while it stays there.
        assert_eq!(courtesy_gain(&[r(15.0, 15.05)]), 0.0);
        assert_abs_diff_eq!(courtesy_gain(&[r(15.0, 14.0)]), -10.0, epsilon = 1e-9);
    }

    fn ctx(cf: CarFollowModel, current: Option<f64>, target: Option<f64>) -> IncentiveContext {
        IncentiveContext {
            ego: EgoState {
                speed: 5.0,
                desired_speed: cf.desired_speed(),
                length: 5.0,
                cf,
            },
            relation: LaneRelation::Symmetric,
            remaining_m: 300.0,
            current: LaneStats::empty(200.0),
            target: Some(LaneStats::empty(200.0)),
            current_leader: current.map(|gap| Neighbor { gap, speed: 5.0 }),
            target_leader: target.map(|gap| Neighbor { gap, speed: 5.0 }),
            target_follower: None,
            related: Vec::new(),
            route: RouteTimes {
                via_current: 100.0,
                via_target: 100.0,
            },
        }
    }

    #[test]
    fn expected_speed_cases() {
        let idm = CarFollowModel::Idm(IdmParams {
            v0: 14.0,
            ..IdmParams::default()
        });
        let e = expected_speed(&ctx(idm, Some(20.0), None));
        assert_eq!(e.after_change, 14.0);
        let e = expected_speed(&ctx(idm, Some(20.0), Some(20.0)));
        assert_eq!(e.current, e.after_change);
        let ovm = CarFollowModel::Fvdm(OvmParams::default());
        let e = expected_speed(&ctx(ovm, Some(10.0), Some(30.0)));
        assert_abs_diff_eq!(e.after_change, 14.128_934_887_686_947, epsilon = 1e-12);
        assert_abs_diff_eq!(e.current, 1.008_151_448_543_772, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn prob_back_properties(a in 0.001f64..1.0, th in 0.01f64..100.0, s in 0.01f64..50.0, d in 0.01f64..5.0) {
            let p = prob_back(a, th, s);
            prop_assert!((0.0..1.0).contains(&p) || p == 1.0 && a * th * s > 36.0);
            prop_assert!(prob_back(a, th + d, s) >= p);
            prop_assert!(prob_back(a, th, s + d) >= p);
            prop_assert_eq!(prob_back(a, th, 0.0), 0.0);
        }

        #[test]
        fn bpr_properties(q in 0.0f64..3000.0, dq in 0.1f64..500.0) {
            let t = route_travel_time(&seg(q));
            prop_assert!(t >= 100.0);
            prop_assert!(route_travel_time(&seg(q + dq)) > t);
        }

        #[test]
        fn comfort_properties(th in 0.1f64..100.0, d in 0.01f64..10.0, beta in 0.1f64..4.0) {
            let j = comfort_cost(th, beta);
            prop_assert!(j < 0.0);
            prop_assert!(comfort_cost(th + d, beta) > j);
        }

        #[test]
        fn courtesy_identity_is_zero(speeds in proptest::collection::vec((0.0f64..30.0, 1.0f64..30.0), 0..8)) {
            let related: Vec<_> = speeds.iter().map(|&(v, vd)| RelatedVehicle { speed: v, speed_after: v, desired_speed: vd }).collect();
            prop_assert_eq!(courtesy_gain(&related), 0.0);
        }

        #[test]
        fn safety_monotone(gap in 0.0f64..100.0, closing in -10.0f64..10.0, dg in 0.0f64..20.0, dc in 0.0f64..5.0) {
            let p = SafetyParams::default();
            if safety_ok(gap, closing, &p).unwrap() {
                prop_assert!(safety_ok(gap + dg, closing, &p).unwrap());
                prop_assert!(safety_ok(gap, closing - dc, &p).unwrap());
            }
        }
    }
}
