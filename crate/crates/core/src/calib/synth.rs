//! Synthetic decision samples labeled by the model itself.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::carfollow::CarFollowModel;
use crate::decision::{evaluate, DrivingStyle};
use crate::error::{Error, Result};
use crate::incentives::{prob_back, EgoState, IncentiveContext, LaneStats, Neighbor, RelatedVehicle, RouteTimes};
use crate::network::{LaneIdx, LaneRelation};

use super::logistic::sigmoid;
use super::{BackLabel, DecisionSample};

const STREAM_CONTEXT: u64 = 1;
const STREAM_LABEL: u64 = 2;
const STREAM_BACK: u64 = 3;

fn log_uniform(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (r.gen_range(lo.ln()..hi.ln())).exp()
}

fn stats(time_headway: f64, mean_speed: f64) -> LaneStats {
    LaneStats {
        mean_gap: time_headway * mean_speed,
        mean_speed,
        time_headway,
        density: 0.0,
        flow: 0.0,
        window_m: 200.0,
        count: 2,
    }
}

fn related(r: &mut ChaCha8Rng, v0: f64, helps: bool) -> RelatedVehicle {
    let desired = v0 * r.gen_range(0.8..1.2);
    let speed = desired * r.gen_range(0.3..1.0);
    let shift = if helps {
        r.gen_range(-0.2..0.8)
    } else {
        r.gen_range(-0.8..0.2)
    };
    RelatedVehicle {
        speed,
        speed_after: (speed + shift * (desired - speed)).max(0.0),
        desired_speed: desired,
    }
}

/// A random but plausible decision context for a driver of `cf`.
pub fn random_context(r: &mut ChaCha8Rng, cf: CarFollowModel) -> IncentiveContext {
    let v0 = cf.desired_speed();
    let relation = if r.gen_bool(0.5) {
        LaneRelation::Asymmetric
    } else {
        LaneRelation::Symmetric
    };
    let via_current: f64 = r.gen_range(10.0..80.0);
    let via_target = match relation {
        LaneRelation::Asymmetric => (via_current + r.gen_range(-60.0..60.0)).max(1.0),
        _ => via_current,
    };
    let speed = v0 * r.gen_range(0.3..1.0);
    // Candidates worth a look: the target leader tends to be farther away.
    let cur = log_uniform(r, 10.0, 100.0);
    let cur_gap = r.gen_bool(0.9).then_some(cur);
    let tgt_gap = r.gen_bool(0.7).then(|| cur * log_uniform(r, 0.6, 3.0));
    let mut related_vehicles = Vec::new();
    if r.gen_bool(0.6) {
        related_vehicles.push(related(r, v0, true));
    }
    if r.gen_bool(0.6) {
        related_vehicles.push(related(r, v0, false));
    }
    IncentiveContext {
        ego: EgoState {
            speed,
            desired_speed: v0,
            length: 5.0,
            cf,
        },
        relation,
        remaining_m: r.gen_range(50.0..500.0),
        current: stats(log_uniform(r, 0.5, 60.0), speed),
        target: Some(stats(log_uniform(r, 0.5, 60.0), v0 * r.gen_range(0.3..1.0))),
        current_leader: cur_gap.map(|g| Neighbor { gap: g, speed }),
        target_leader: tgt_gap.map(|g| Neighbor { gap: g, speed }),
        target_follower: None,
        related: related_vehicles,
        route: RouteTimes {
            via_current,
            via_target,
        },
    }
}

/// `n` samples for `style`. Labels are drawn from `sigmoid(G - g_threshold)`
/// and then flipped with probability `noise`.
pub fn gen_samples(
    style: &DrivingStyle,
    cf: CarFollowModel,
    n: usize,
    seed: u64,
    noise: f64,
) -> Result<Vec<DecisionSample>> {
    if !(0.0..=0.5).contains(&noise) {
        return Err(Error::Config(format!("noise must be in [0, 0.5], got {noise}")));
    }
    let cf = cf.with_desired_speed(style.desired_speed);
    let stream = |k| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(k);
        r
    };
    let (mut rc, mut rl) = (stream(STREAM_CONTEXT), stream(STREAM_LABEL));
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let ctx = random_context(&mut rc, cf);
        let e = evaluate(LaneIdx(1), &ctx, style)?;
        let h = sigmoid(e.g - style.g_threshold);
        let mut label = rl.gen_bool(h);
        if rl.gen_bool(noise) {
            label = !label;
        }
        out.push(DecisionSample {
            style: style.name.clone(),
            a_route: e.yields.route,
            b_speed: e.yields.speed,
            d_courtesy: e.yields.courtesy,
            th_target: ctx.target.map_or(f64::NAN, |t| t.time_headway),
            th_current: ctx.current.time_headway,
            p_back: e.table.p_back,
            label: label as u8,
        });
    }
    Ok(out)
}

/// `n` asymmetric changes whose return is drawn from the prob-back model.
pub fn gen_back_labels(alpha: f64, n: usize, seed: u64) -> Vec<BackLabel> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(STREAM_BACK);
    (0..n)
        .map(|_| {
            let th = r.gen_range(1.0..30.0);
            let s = r.gen_range(0.05..1.0);
            BackLabel {
                time_headway_s: th,
                remaining_km: s,
                back: r.gen_bool(prob_back(alpha, th, s)),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gen(style: &DrivingStyle, n: usize) -> Vec<DecisionSample> {
        let cf = CarFollowModel::builtin(&style.carfollow).unwrap();
        gen_samples(style, cf, n, 11, 0.05).unwrap()
    }

    #[test]
    fn empty_and_deterministic() {
        let a = DrivingStyle::aggressive();
        assert!(gen(&a, 0).is_empty());
        assert_eq!(gen(&a, 50), gen(&a, 50));
    }

    #[test]
    fn aggressive_changes_more_often_than_conservative() {
        // Same contexts and label draws; only the style differs.
        let c = DrivingStyle {
            carfollow: "fvdm".into(),
            desired_speed: 16.7,
            ..DrivingStyle::conservative()
        };
        let rate = |s: &[DecisionSample]| s.iter().filter(|x| x.label == 1).count() as f64 / s.len() as f64;
        let ra = rate(&gen(&DrivingStyle::aggressive(), 4000));
        let rc = rate(&gen(&c, 4000));
        assert!(rc < ra, "conservative {rc} vs aggressive {ra}");
    }

    #[test]
    fn back_labels_follow_the_model() {
        let l = gen_back_labels(0.058, 4000, 1);
        let observed = l.iter().filter(|b| b.back).count() as f64 / l.len() as f64;
        let predicted = l
            .iter()
            .map(|b| prob_back(0.058, b.time_headway_s, b.remaining_km))
            .sum::<f64>()
            / l.len() as f64;
        assert!((observed - predicted).abs() < 0.03);
    }
}
