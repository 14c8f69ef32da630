//! End-to-end acceptance checks. Each check prints one PASS/FAIL line; the
//! process exits non-zero if any check fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use lanesim::calib::logistic::loss_and_gradient;
use lanesim::calib::synth::{gen_back_labels, gen_samples};
use lanesim::calib::{calibrate, fit_alpha, logistic_loss, DecisionSample, FitOptions, Params};
use lanesim::carfollow::{idm_accel, CarFollowModel, IdmParams};
use lanesim::decision::DrivingStyle;
use lanesim::incentives::{prob_back, route_travel_time};
use lanesim::network::{RouteSegment, SectionIdx};
use lanesim::sim::io::{write_events, write_metrics};
use lanesim::sim::scenario::{ModelKind, Scenario};
use lanesim::sim::world::{Classification, LaneChangeEvent};
use lanesim::sim::{run, RunOutput, ID_STRIDE};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn scenario_path(name: &str) -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", name]
        .iter()
        .collect()
}

fn load(path: &Path) -> Scenario {
    Scenario::load(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn scenario(name: &str) -> Scenario {
    load(&scenario_path(name))
}

fn simulate(sc: &Scenario) -> RunOutput {
    run(sc).unwrap_or_else(|e| panic!("simulation failed: {e}"))
}

fn changes_per_level(out: &RunOutput, levels: usize) -> Vec<u64> {
    let mut n = vec![0; levels];
    for e in &out.events {
        n[(e.vehicle_id / ID_STRIDE) as usize] += 1;
    }
    n
}

fn within(got: f64, truth: f64, rel: f64, abs: f64) -> bool {
    (got - truth).abs() <= (rel * truth.abs()).max(abs)
}

fn parameter_recovery() -> Outcome {
    let start = Instant::now();
    let truth = DrivingStyle::aggressive();
    let cf = CarFollowModel::builtin(&truth.carfollow).unwrap();
    let samples = gen_samples(&truth, cf, 5000, 1, 0.05).unwrap();
    let fits = calibrate(&samples, 0.667, 1, &FitOptions::default()).unwrap();
    let p = fits[0].params;
    let back = gen_back_labels(truth.alpha, 5000, 1);
    let alpha = fit_alpha(&back, 1e-9).unwrap().alpha;
    let elapsed = start.elapsed();

    let mut ok = Vec::new();
    let names = ["route", "speed", "comfort", "courtesy"];
    let mut detail = String::new();
    for (k, t) in truth.weights().iter().enumerate() {
        let pass = within(p.mu[k], *t, 0.10, 0.05);
        ok.push(pass);
        detail += &format!(
            "mu_{}={:.3}/{:.3}{} ",
            names[k],
            p.mu[k],
            t,
            if pass { "" } else { "!" }
        );
    }
    let beta_ok = (p.beta - truth.beta).abs() <= 0.2;
    let alpha_ok = (alpha - truth.alpha).abs() <= 0.005;
    let time_ok = elapsed < Duration::from_secs(60);
    detail += &format!(
        "beta={:.3}/{:.3}{} alpha={:.4}/{:.4}{} in {:.1}s",
        p.beta,
        truth.beta,
        if beta_ok { "" } else { "!" },
        alpha,
        truth.alpha,
        if alpha_ok { "" } else { "!" },
        elapsed.as_secs_f64()
    );
    outcome(ok.iter().all(|x| *x) && beta_ok && alpha_ok && time_ok, detail)
}

fn gradient_check() -> Outcome {
    let truth = DrivingStyle::aggressive();
    let cf = CarFollowModel::builtin(&truth.carfollow).unwrap();
    let samples: Vec<DecisionSample> = gen_samples(&truth, cf, 400, 3, 0.05).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let p = Params {
            bias: r.gen_range(-1.0..1.0),
            mu: [
                r.gen_range(-2.0..2.0),
                r.gen_range(-2.0..2.0),
                r.gen_range(-2.0..2.0),
                r.gen_range(-2.0..2.0),
            ],
            beta: r.gen_range(0.3..3.0),
        };
        let (_, g) = loss_and_gradient(&p, &samples);
        let theta = p.to_vec();
        let mut num = [0.0; 6];
        for k in 0..6 {
            let h = 1e-5 * theta[k].abs().max(1.0);
            let mut up = theta;
            let mut dn = theta;
            up[k] += h;
            dn[k] -= h;
            let ju = loss_and_gradient(&Params::from_vec(&up), &samples).0;
            let jd = loss_and_gradient(&Params::from_vec(&dn), &samples).0;
            num[k] = (ju - jd) / (2.0 * h);
        }
        let diff = g.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = num.iter().map(|b| b * b).sum::<f64>().sqrt().max(1e-12);
        worst = worst.max(diff / scale);
    }
    outcome(worst < 1e-6, format!("worst relative error {worst:.2e} over 20 points"))
}

fn relative_difference(a: f64, b: f64) -> f64 {
    let m = 0.5 * (a.abs() + b.abs());
    if m == 0.0 {
        0.0
    } else {
        (a - b).abs() / m
    }
}

fn highway_parity() -> Outcome {
    let start = Instant::now();
    let mut sc = scenario("highway.json");
    let mut series = Vec::new();
    for m in [ModelKind::Mcdm, ModelKind::Mobil] {
        sc.model = m;
        let out = simulate(&sc);
        let bins: BTreeMap<i64, f64> = out
            .rates
            .iter()
            .map(|b| ((b.bin_density_veh_km * 1e6).round() as i64, b.rate_per_km_h))
            .collect();
        series.push(bins);
    }
    let diffs: Vec<f64> = series[0]
        .iter()
        .filter_map(|(k, a)| series[1].get(k).map(|b| relative_difference(*a, *b)))
        .collect();
    let elapsed = start.elapsed();
    if diffs.is_empty() {
        return outcome(false, "no shared density bins");
    }
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    outcome(
        mean <= 0.30 && elapsed < Duration::from_secs(300),
        format!(
            "mean relative difference {:.3} over {} shared bins in {:.1}s",
            mean,
            diffs.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn route_weight_sensitivity() -> Outcome {
    let base = scenario("urban.json");
    let mut doubled = base.clone();
    for (s, _) in &mut doubled.styles {
        s.mu_route *= 2.0;
    }
    let levels = base.demand_levels.len();
    let a = changes_per_level(&simulate(&base), levels);
    let b = changes_per_level(&simulate(&doubled), levels);
    let pass = a.iter().zip(&b).all(|(x, y)| y > x);
    outcome(pass, format!("lane changes per demand level {a:?} -> {b:?}"))
}

fn style_ordering() -> Outcome {
    let mut agg = scenario("urban.json");
    agg.set_style_mix(&[("aggressive", 1.0)]).unwrap();
    let mut con = scenario("urban.json");
    con.set_style_mix(&[("conservative", 1.0)]).unwrap();
    let na = simulate(&agg).summary.lane_changes;
    let nc = simulate(&con).summary.lane_changes;
    let ratio = na as f64 / nc.max(1) as f64;
    outcome(
        ratio >= 2.0,
        format!("aggressive {na} vs conservative {nc} lane changes, ratio {ratio:.2}"),
    )
}

fn prob_back_consistency() -> Outcome {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "fixtures", "overtake.json"]
        .iter()
        .collect();
    let sc = load(&path);
    let out = simulate(&sc);
    let resolved: Vec<&LaneChangeEvent> = out
        .events
        .iter()
        .filter(|e| {
            matches!(
                e.classification,
                Classification::ReturnedToOriginal | Classification::RouteChanged
            )
        })
        .collect();
    let n = resolved.len();
    if n < 500 {
        return outcome(false, format!("only {n} resolved asymmetric changes"));
    }
    let returned = resolved
        .iter()
        .filter(|e| e.classification == Classification::ReturnedToOriginal)
        .count();
    let observed = returned as f64 / n as f64;
    let predicted = resolved.iter().map(|e| e.p_back.unwrap_or(0.0)).sum::<f64>() / n as f64;
    outcome(
        (observed - predicted).abs() <= 0.05,
        format!("returned {observed:.3} vs predicted {predicted:.3} over {n} changes"),
    )
}

fn output_hashes(sc: &Scenario, dir: &Path) -> (String, String) {
    let out = simulate(sc);
    let m = dir.join("metrics.csv");
    let e = dir.join("events.csv");
    write_metrics(&m, &out.rates).unwrap();
    write_events(&e, &sc.network, &out.events).unwrap();
    let h = |p: &Path| format!("{:x}", Sha256::digest(std::fs::read(p).unwrap()));
    (h(&m), h(&e))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut detail = Vec::new();
    let mut pass = true;
    for m in [ModelKind::Mcdm, ModelKind::Mobil] {
        let mut sc = scenario("urban.json");
        sc.model = m;
        let a = output_hashes(&sc, dir.path());
        let b = output_hashes(&sc, dir.path());
        pass &= a == b;
        detail.push(format!(
            "{} {}",
            m.as_str(),
            if a == b { "identical" } else { "differs" }
        ));
    }
    outcome(pass, detail.join(", "))
}

fn physical_invariants() -> Outcome {
    let mut sc = scenario("urban.json");
    sc.duration_s = 3600.0;
    sc.dt_s = 0.1;
    match run(&sc) {
        Ok(out) => {
            let s = &out.summary;
            let conserved = s.spawned == s.exited + s.active;
            outcome(
                conserved && s.negative_gap_violations == 0,
                format!(
                    "spawned {} = exited {} + active {}, {} negative gaps",
                    s.spawned, s.exited, s.active, s.negative_gap_violations
                ),
            )
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

fn unit_values() -> Outcome {
    let pb = prob_back(0.058, 2.0, 10.0);
    let seg = RouteSegment {
        section: SectionIdx(0),
        free_flow_time: 100.0,
        flow_vph: 1800.0,
        capacity_vph: 1800.0,
        k1: 0.15,
        k2: 4.0,
    };
    let tt = route_travel_time(&seg);
    let idm = idm_accel(&IdmParams::default(), 20.0, 50.0, 0.0).unwrap();
    let ll = logistic_loss(0.5, 1.0);
    let pass = (pb - 0.6865).abs() <= 1e-4
        && tt == 115.0
        && (idm - 0.5500).abs() <= 1e-4
        && (ll - std::f64::consts::LN_2).abs() <= 1e-12;
    outcome(
        pass,
        format!("prob_back {pb:.6}, travel time {tt}, idm {idm:.6}, loss {ll:.15}"),
    )
}

fn scale_invariance() -> Outcome {
    let base = scenario("urban.json");
    let mut scaled = base.clone();
    for (s, _) in &mut scaled.styles {
        *s = s.scaled(3.0);
    }
    let a = simulate(&base).events;
    let b = simulate(&scaled).events;
    if a.len() != b.len() {
        return outcome(false, format!("{} vs {} events", a.len(), b.len()));
    }
    let same = a.iter().zip(&b).all(|(x, y)| {
        x.time == y.time
            && x.vehicle_id == y.vehicle_id
            && x.from_lane == y.from_lane
            && x.to_lane == y.to_lane
            && x.classification == y.classification
            && (3.0 * x.g - y.g).abs() <= 1e-9 * y.g.abs().max(1.0)
    });
    outcome(same, format!("{} events, gains scale by 3", a.len()))
}

type Check = (&'static str, fn() -> Outcome);

fn main() {
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let checks: [Check; 10] = [
        ("parameter_recovery", parameter_recovery),
        ("gradient_check", gradient_check),
        ("highway_parity", highway_parity),
        ("route_weight_sensitivity", route_weight_sensitivity),
        ("style_ordering", style_ordering),
        ("prob_back_consistency", prob_back_consistency),
        ("determinism", determinism),
        ("physical_invariants", physical_invariants),
        ("unit_values", unit_values),
        ("scale_invariance", scale_invariance),
    ];
    let mut failed = 0;
    for (k, (name, check)) in checks.iter().enumerate() {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let start = Instant::now();
        let o = std::panic::catch_unwind(check).unwrap_or_else(|e| Outcome {
            pass: false,
            detail: format!(
                "panicked: {}",
                e.downcast_ref::<String>()
                    .map(String::as_str)
                    .or_else(|| e.downcast_ref::<&str>().copied())
                    .unwrap_or("?")
            ),
        });
        println!(
            "[{:>2}] {:<26} {} ({:.1}s) {}",
            k + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}
