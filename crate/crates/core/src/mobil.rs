//! MOBIL lane-change baseline.

use serde::{Deserialize, Serialize};

use crate::carfollow::{idm_accel, IdmParams};
use crate::error::{Error, Result};
use crate::incentives::Neighbor;
use crate::network::LaneIdx;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MobilParams {
    pub politeness: f64,
    pub a_threshold: f64,
    pub b_safe: f64,
    /// Added to the incentive of right changes and subtracted from left ones.
    pub right_bias: f64,
}

impl Default for MobilParams {
    fn default() -> Self {
        MobilParams {
            politeness: 0.3,
            a_threshold: 0.1,
            b_safe: 4.0,
            right_bias: 0.0,
        }
    }
}

impl MobilParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.politeness) || !(self.a_threshold >= 0.0) || !(self.b_safe > 0.0) {
            return Err(Error::Config(
                "mobil needs politeness in [0, 1], a_threshold >= 0 and b_safe > 0".into(),
            ));
        }
        Ok(())
    }
}

/// A follower affected by the maneuver, with its leader before and after.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Follower {
    pub idm: IdmParams,
    pub speed: f64,
    pub before: Option<Neighbor>,
    pub after: Option<Neighbor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MobilCandidate {
    pub target: LaneIdx,
    pub to_right: bool,
    pub ego_idm: IdmParams,
    pub ego_speed: f64,
    pub current_leader: Option<Neighbor>,
    pub target_leader: Option<Neighbor>,
    pub old_follower: Option<Follower>,
    pub new_follower: Option<Follower>,
}

/// IDM acceleration behind `leader`; overlapping vehicles yield `-inf`.
fn accel(p: &IdmParams, v: f64, leader: Option<Neighbor>) -> f64 {
    match leader {
        None => idm_accel(p, v, f64::INFINITY, 0.0).unwrap_or(f64::NEG_INFINITY),
        Some(l) => idm_accel(p, v, l.gap, v - l.speed).unwrap_or(f64::NEG_INFINITY),
    }
}

fn follower_gain(f: &Option<Follower>) -> (f64, f64) {
    match f {
        None => (0.0, 0.0),
        Some(f) => {
            let before = accel(&f.idm, f.speed, f.before);
            let after = accel(&f.idm, f.speed, f.after);
            (after - before, after)
        }
    }
}

/// Incentive of one candidate and whether it passes the safety veto.
pub fn mobil_incentive(c: &MobilCandidate, p: &MobilParams) -> (f64, bool) {
    let a_ego = accel(&c.ego_idm, c.ego_speed, c.current_leader);
    let a_ego_new = accel(&c.ego_idm, c.ego_speed, c.target_leader);
    let (d_old, _) = follower_gain(&c.old_follower);
    let (d_new, a_new) = follower_gain(&c.new_follower);
    let bias = if c.to_right { p.right_bias } else { -p.right_bias };
    let incentive = (a_ego_new - a_ego) + p.politeness * (d_old + d_new) + bias;
    let safe = a_ego_new.is_finite() && a_new >= -p.b_safe;
    (incentive, safe)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilOutcome {
    /// Chosen lane, if any candidate passes.
    pub target: Option<LaneIdx>,
    /// Incentive of the best safe candidate.
    pub incentive: Option<f64>,
}

pub fn mobil_decide(candidates: &[MobilCandidate], p: &MobilParams) -> MobilOutcome {
    let mut best: Option<(LaneIdx, f64)> = None;
    for c in candidates {
        let (gain, safe) = mobil_incentive(c, p);
        if safe && gain.is_finite() && best.is_none_or(|(_, g)| gain > g) {
            best = Some((c.target, gain));
        }
    }
    match best {
        Some((t, g)) if g > p.a_threshold => MobilOutcome {
            target: Some(t),
            incentive: Some(g),
        },
        _ => MobilOutcome {
            target: None,
            incentive: best.map(|b| b.1),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn idm() -> IdmParams {
        IdmParams::default()
    }

    fn lead(gap: f64, speed: f64) -> Option<Neighbor> {
        Some(Neighbor { gap, speed })
    }

    fn cand(cur: Option<Neighbor>, tgt: Option<Neighbor>, new_f: Option<Follower>) -> MobilCandidate {
        MobilCandidate {
            target: LaneIdx(1),
            to_right: false,
            ego_idm: idm(),
            ego_speed: 20.0,
            current_leader: cur,
            target_leader: tgt,
            old_follower: None,
            new_follower: new_f,
        }
    }

    #[test]
    fn symmetric_keeps() {
        let c = cand(lead(40.0, 20.0), lead(40.0, 20.0), None);
        assert_eq!(mobil_decide(&[c], &MobilParams::default()).target, None);
    }

    #[test]
    fn gain_changes() {
        // Find a current gap where the ego's acceleration is 0.5 below free road.
        let free = idm_accel(&idm(), 20.0, f64::INFINITY, 0.0).unwrap();
        let (mut lo, mut hi) = (5.0, 500.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if free - idm_accel(&idm(), 20.0, mid, 0.0).unwrap() > 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let p = MobilParams {
            politeness: 0.0,
            ..MobilParams::default()
        };
        let c = cand(lead(hi, 20.0), None, None);
        let (g, safe) = mobil_incentive(&c, &p);
        assert!((g - 0.5).abs() < 1e-9 && safe);
        assert_eq!(mobil_decide(std::slice::from_ref(&c), &p).target, Some(LaneIdx(1)));

        // Same gain, but the new follower would brake at about 5 m/s^2.
        let f = Follower {
            idm: idm(),
            speed: 20.0,
            before: None,
            after: lead(15.0, 20.0),
        };
        let a_after = idm_accel(&idm(), 20.0, 15.0, 0.0).unwrap();
        assert!(a_after < -4.0);
        let tight = MobilCandidate {
            new_follower: Some(f),
            ..c
        };
        let (_, safe) = mobil_incentive(&tight, &p);
        assert!(!safe);
        assert_eq!(mobil_decide(&[tight], &p).target, None);
    }

    proptest! {
        #[test]
        fn veto_is_absolute(pol in 0.0f64..1.0, thr in 0.0f64..1.0, gap_f in 0.5f64..60.0, vf in 0.0f64..30.0) {
            let p = MobilParams { politeness: pol, a_threshold: thr, ..MobilParams::default() };
            let f = Follower { idm: idm(), speed: vf, before: None, after: lead(gap_f, 20.0) };
            let c = cand(lead(5.0, 0.0), None, Some(f));
            let a_new = idm_accel(&idm(), vf, gap_f, vf - 20.0).unwrap();
            if a_new < -p.b_safe {
                prop_assert_eq!(mobil_decide(&[c], &p).target, None);
            }
        }

        #[test]
        fn selfish_changes_on_gain(cur in 3.0f64..100.0, tgt in 3.0f64..100.0) {
            let p = MobilParams { politeness: 0.0, a_threshold: 0.0, ..MobilParams::default() };
            let c = cand(lead(cur, 15.0), lead(tgt, 15.0), None);
            let a = idm_accel(&idm(), 20.0, cur, 5.0).unwrap();
            let b = idm_accel(&idm(), 20.0, tgt, 5.0).unwrap();
            let out = mobil_decide(&[c], &p);
            prop_assert_eq!(out.target.is_some(), b > a);
        }
    }
}
