//! Cost table, expected gains, earning yields and the weighted lane-change
//! decision.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::incentives::{
    comfort_cost, courtesy_gain, expected_speed, prob_back, safety_ok, IncentiveContext, LaneStats, SafetyParams,
};
use crate::network::{LaneIdx, LaneRelation};

/// Baselines smaller than this are treated as zero.
pub const YIELD_EPS: f64 = 1e-6;
/// Yields are clamped to `[-YIELD_CAP, YIELD_CAP]`.
pub const YIELD_CAP: f64 = 10.0;
/// Floor on the speed used to turn remaining distance into travel time, m/s.
pub const ROUTE_SPEED_FLOOR: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrivingStyle {
    pub name: String,
    pub mu_route: f64,
    pub mu_speed: f64,
    pub mu_comfort: f64,
    pub mu_courtesy: f64,
    /// Comfort exponent.
    pub beta: f64,
    /// Prob-back coefficient, 1/(s km).
    pub alpha: f64,
    pub g_threshold: f64,
    /// Minimum time between two lane changes of one vehicle, s.
    pub cooldown: f64,
    /// m/s
    pub desired_speed: f64,
    /// Car-following preset name.
    pub carfollow: String,
}

impl DrivingStyle {
    pub fn aggressive() -> Self {
        DrivingStyle {
            name: "aggressive".into(),
            mu_route: 1.26,
            mu_speed: 0.58,
            mu_comfort: 0.03,
            mu_courtesy: 0.61,
            beta: 1.1,
            alpha: 0.058,
            g_threshold: 0.1,
            cooldown: 5.0,
            desired_speed: 16.7,
            carfollow: "fvdm".into(),
        }
    }

    pub fn conservative() -> Self {
        DrivingStyle {
            name: "conservative".into(),
            mu_route: 0.44,
            mu_speed: 0.41,
            mu_comfort: 0.09,
            mu_courtesy: 1.72,
            beta: 2.3,
            alpha: 0.058,
            g_threshold: 0.1,
            cooldown: 5.0,
            desired_speed: 13.9,
            carfollow: "idm".into(),
        }
    }

    /// Conservative driver who weighs comfort three times as much.
    pub fn inattentive() -> Self {
        let c = Self::conservative();
        DrivingStyle {
            name: "inattentive".into(),
            mu_comfort: c.mu_comfort * 3.0,
            ..c
        }
    }

    /// Conservative driver who weighs courtesy twice as much.
    pub fn altruistic() -> Self {
        let c = Self::conservative();
        DrivingStyle {
            name: "altruistic".into(),
            mu_courtesy: c.mu_courtesy * 2.0,
            ..c
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "aggressive" => Some(Self::aggressive()),
            "conservative" => Some(Self::conservative()),
            "inattentive" => Some(Self::inattentive()),
            "altruistic" => Some(Self::altruistic()),
            _ => None,
        }
    }

    /// Weights in incentive order: route, speed, comfort, courtesy.
    pub fn weights(&self) -> [f64; 4] {
        [self.mu_route, self.mu_speed, self.mu_comfort, self.mu_courtesy]
    }

    /// Same style with every weight and the threshold multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        DrivingStyle {
            mu_route: self.mu_route * c,
            mu_speed: self.mu_speed * c,
            mu_comfort: self.mu_comfort * c,
            mu_courtesy: self.mu_courtesy * c,
            g_threshold: self.g_threshold * c,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("style `{}`: {what}", self.name)));
        if self.weights().iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
            return bad("weights must be finite and >= 0");
        }
        if !self.g_threshold.is_finite() {
            return bad("g_threshold must be finite");
        }
        if !(self.cooldown >= 0.0) {
            return bad("cooldown must be >= 0");
        }
        if !(self.beta > 0.0) || !(self.alpha >= 0.0) {
            return bad("beta must be > 0 and alpha >= 0");
        }
        if !(self.desired_speed > 0.0) {
            return bad("desired_speed must be > 0");
        }
        Ok(())
    }
}

pub fn style_presets() -> BTreeMap<String, DrivingStyle> {
    ["aggressive", "conservative", "inattentive", "altruistic"]
        .iter()
        .map(|n| (n.to_string(), DrivingStyle::preset(n).unwrap()))
        .collect()
}

/// One incentive's entries for keep-lane, change-and-return and change-route.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub keep: f64,
    pub change_return: f64,
    pub change_route: f64,
}

impl CostRow {
    fn uniform(x: f64) -> Self {
        CostRow {
            keep: x,
            change_return: x,
            change_route: x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    /// Travel time to the destination, s.
    pub routing: CostRow,
    /// Expected speed, m/s.
    pub speed: CostRow,
    /// Courtesy gain of the maneuver for affected vehicles.
    pub courtesy: CostRow,
    /// Comfort cost, non-positive.
    pub comfort: CostRow,
    pub p_back: f64,
    pub relation: LaneRelation,
}

/// A value per incentive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PerIncentive {
    pub route: f64,
    pub speed: f64,
    pub comfort: f64,
    pub courtesy: f64,
}

impl PerIncentive {
    pub fn as_array(&self) -> [f64; 4] {
        [self.route, self.speed, self.comfort, self.courtesy]
    }
}

/// Remaining distance converted to km for the prob-back exponent.
pub fn back_probability(alpha: f64, target: &LaneStats, remaining_m: f64, relation: LaneRelation) -> f64 {
    match relation {
        LaneRelation::Asymmetric => prob_back(alpha, target.time_headway, remaining_m / 1000.0),
        _ => 0.0,
    }
}

pub fn build_cost_table(ctx: &IncentiveContext, style: &DrivingStyle) -> Result<CostTable> {
    let target = ctx
        .target
        .as_ref()
        .ok_or_else(|| Error::IncompleteContext("missing target lane statistics".into()))?;
    if ctx.relation == LaneRelation::NotAdjacent {
        return Err(Error::IncompleteContext("target lane is not adjacent".into()));
    }
    let speeds = expected_speed(ctx);
    let s = ctx.remaining_m;
    let p = back_probability(style.alpha, target, s, ctx.relation);

    let t_keep = s / speeds.current.max(ROUTE_SPEED_FLOOR) + ctx.route.via_current;
    let routing = match ctx.relation {
        LaneRelation::Asymmetric => {
            let t_lane = s / speeds.after_change.max(ROUTE_SPEED_FLOOR);
            CostRow {
                keep: t_keep,
                change_return: t_lane + ctx.route.via_current,
                change_route: t_lane + ctx.route.via_target,
            }
        }
        _ => CostRow::uniform(t_keep),
    };
    let a = courtesy_gain(&ctx.related);
    let j_target = comfort_cost(target.time_headway, style.beta);
    let j_back = comfort_cost(ctx.current.time_headway, style.beta);
    Ok(CostTable {
        routing,
        speed: CostRow {
            keep: speeds.current,
            change_return: speeds.after_change,
            change_route: speeds.after_change,
        },
        courtesy: CostRow {
            keep: 0.0,
            change_return: a,
            change_route: a,
        },
        comfort: CostRow {
            keep: 0.0,
            change_return: j_target + j_back,
            change_route: j_target,
        },
        p_back: p,
        relation: ctx.relation,
    })
}

/// `p * c_cl + (1 - p) * c_cr - c_o` for a row of gains.
pub fn expectation(row: &CostRow, p: f64) -> f64 {
    p * row.change_return + (1.0 - p) * row.change_route - row.keep
}

/// Expected gain per incentive, positive when changing is better. Travel time
/// is a cost and is negated; comfort entries are already signed as utility.
pub fn expected_gain(table: &CostTable) -> PerIncentive {
    let p = table.p_back;
    PerIncentive {
        route: -expectation(&table.routing, p),
        speed: expectation(&table.speed, p),
        comfort: expectation(&table.comfort, p),
        courtesy: expectation(&table.courtesy, p),
    }
}

/// `C / |C_o|`, capped.
pub fn earning_yield(c: f64, c_o: f64) -> f64 {
    let y = if c_o.abs() < YIELD_EPS {
        if c == 0.0 {
            0.0
        } else {
            c.signum() * YIELD_CAP
        }
    } else {
        c / c_o.abs()
    };
    y.clamp(-YIELD_CAP, YIELD_CAP)
}

/// Yields of a cost table. Comfort and courtesy have a zero keep-lane entry
/// and are already dimensionless, so their gains are used on a unit baseline.
pub fn yields(table: &CostTable) -> (PerIncentive, PerIncentive) {
    let c = expected_gain(table);
    let y = PerIncentive {
        route: earning_yield(c.route, table.routing.keep),
        speed: earning_yield(c.speed, table.speed.keep),
        comfort: earning_yield(c.comfort, 1.0),
        courtesy: earning_yield(c.courtesy, 1.0),
    };
    (c, y)
}

pub fn combine(y: &PerIncentive, style: &DrivingStyle) -> f64 {
    style.mu_route * y.route + style.mu_speed * y.speed + style.mu_comfort * y.comfort + style.mu_courtesy * y.courtesy
}

/// Evaluation of one candidate lane.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub target: LaneIdx,
    pub table: CostTable,
    pub gains: PerIncentive,
    pub yields: PerIncentive,
    pub g: f64,
}

pub fn evaluate(target: LaneIdx, ctx: &IncentiveContext, style: &DrivingStyle) -> Result<Evaluation> {
    let table = build_cost_table(ctx, style)?;
    let (gains, yields) = yields(&table);
    let g = combine(&yields, style);
    Ok(Evaluation {
        target,
        table,
        gains,
        yields,
        g,
    })
}

/// Gap acceptance for moving into the target lane of `ctx`.
pub fn maneuver_safe(ctx: &IncentiveContext, safety: &SafetyParams) -> Result<bool> {
    if let Some(l) = ctx.target_leader {
        if l.gap < safety.min_gap {
            return Ok(false);
        }
    }
    match ctx.target_follower {
        Some(f) => safety_ok(f.gap, f.speed - ctx.ego.speed, safety),
        None => Ok(true),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Keep,
    Change(LaneIdx),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionOutcome {
    /// Best candidate by combined gain, if any candidate was evaluated.
    pub best: Option<Evaluation>,
    pub decision: Decision,
    pub safety_gated: bool,
    /// Lane whose speed the vehicle should adapt to while waiting for a gap.
    pub synchronize: Option<LaneIdx>,
}

impl DecisionOutcome {
    pub fn keep() -> Self {
        DecisionOutcome {
            best: None,
            decision: Decision::Keep,
            safety_gated: false,
            synchronize: None,
        }
    }
}

/// A candidate neighbor lane with its decision context.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub target: LaneIdx,
    pub ctx: IncentiveContext,
}

/// Picks the candidate with the largest combined gain and changes to it when
/// the gain clears the threshold, the gap is safe and the cooldown elapsed.
pub fn decide(
    candidates: &[Candidate],
    style: &DrivingStyle,
    safety: &SafetyParams,
    since_last_change: f64,
) -> Result<DecisionOutcome> {
    if since_last_change < style.cooldown {
        return Ok(DecisionOutcome::keep());
    }
    let mut best: Option<(Evaluation, &Candidate)> = None;
    for c in candidates {
        let e = evaluate(c.target, &c.ctx, style)?;
        if best.as_ref().is_none_or(|(b, _)| e.g > b.g) {
            best = Some((e, c));
        }
    }
    let Some((eval, cand)) = best else {
        return Ok(DecisionOutcome::keep());
    };
    if eval.g <= style.g_threshold {
        return Ok(DecisionOutcome {
            best: Some(eval),
            ..DecisionOutcome::keep()
        });
    }
    if maneuver_safe(&cand.ctx, safety)? {
        Ok(DecisionOutcome {
            decision: Decision::Change(eval.target),
            best: Some(eval),
            safety_gated: false,
            synchronize: None,
        })
    } else {
        Ok(DecisionOutcome {
            synchronize: Some(eval.target),
            best: Some(eval),
            decision: Decision::Keep,
            safety_gated: true,
        })
    }
}
