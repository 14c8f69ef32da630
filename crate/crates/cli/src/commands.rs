use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use lanesim::calib::alpha::MIN_BACK_LABELS;
use lanesim::calib::extract::{extract_events, ExtractOptions};
use lanesim::calib::synth::{gen_back_labels, gen_samples};
use lanesim::calib::{self, AlphaFit, BackLabel, CalibrationResult, DecisionSample, FitOptions, Params, Validation};
use lanesim::carfollow::CarFollowModel;
use lanesim::decision::DrivingStyle;
use lanesim::network::Network;
use lanesim::sim::io::{read_trajectories, trajectory_rows, write_events, write_metrics, write_trajectories};
use lanesim::sim::metrics::{RateBin, Summary};
use lanesim::sim::scenario::{ModelKind, Scenario};
use lanesim::sim::{self, RunOutput};
use lanesim::Error;

use crate::manifest::{config_hash, prepare, write_json, Manifest, TOOL_VERSION};

const METRICS: &str = "metrics.csv";
const EVENTS: &str = "events.csv";
const TRAJECTORIES: &str = "trajectories.csv";
const RUN_MANIFEST: &str = "run-manifest.json";
const SUMMARY: &str = "summary.json";

fn simulate(sc: &Scenario) -> Result<RunOutput> {
    let out = sim::run(sc)?;
    if out.summary.negative_gap_violations > 0 {
        bail!(Error::InvariantBreach {
            time: sc.duration_s,
            detail: format!("{} negative gaps", out.summary.negative_gap_violations),
        });
    }
    Ok(out)
}

fn write_run(dir: &Path, sc: &Scenario, out: &RunOutput) -> Result<Vec<&'static str>> {
    let mut written = vec![METRICS, EVENTS, SUMMARY];
    write_metrics(&dir.join(METRICS), &out.rates)?;
    write_events(&dir.join(EVENTS), &sc.network, &out.events)?;
    write_json(&dir.join(SUMMARY), &out.summary)?;
    if sc.trajectory_interval_s.is_some() {
        write_trajectories(
            &dir.join(TRAJECTORIES),
            &trajectory_rows(&sc.network, &out.trajectories),
        )?;
        written.push(TRAJECTORIES);
    }
    Ok(written)
}

fn log_summary(model: ModelKind, s: &Summary) {
    info!(
        "{}: {} lane changes, {} spawned, {} exited ({} off route), mean speed {:.2} m/s",
        model.as_str(),
        s.lane_changes,
        s.spawned,
        s.exited,
        s.exited_off_route,
        s.mean_speed_mps
    );
}

pub fn run(scenario: &Path, sc: &Scenario, dir: &Path, force: bool, invocation: &str) -> Result<()> {
    prepare(dir, &[METRICS, EVENTS, RUN_MANIFEST, SUMMARY, TRAJECTORIES], force)?;
    let out = simulate(sc)?;
    log_summary(sc.model, &out.summary);
    let written = write_run(dir, sc, &out)?;
    let mut m = Manifest::new("run", invocation, config_hash(&[scenario, &sc.network_path])?, sc.seed);
    m.input(scenario)?;
    m.input(&sc.network_path)?;
    for f in written {
        m.output(dir, f)?;
    }
    m.write(dir.join(RUN_MANIFEST))
}

/// `|a - b| / mean(a, b)`; zero when both are zero.
pub fn relative_difference(a: f64, b: f64) -> f64 {
    let m = 0.5 * (a.abs() + b.abs());
    if m == 0.0 {
        0.0
    } else {
        (a - b).abs() / m
    }
}

/// Aligns per-model rate tables on shared bin centers. Bins missing in a
/// model are left empty.
pub fn align(rates: &[Vec<RateBin>]) -> Vec<(f64, Vec<Option<f64>>)> {
    let mut rows: BTreeMap<i64, Vec<Option<f64>>> = BTreeMap::new();
    for (m, bins) in rates.iter().enumerate() {
        for b in bins {
            // Bin centers are exact multiples of half a bin width.
            let key = (b.bin_density_veh_km * 1e6).round() as i64;
            rows.entry(key).or_insert_with(|| vec![None; rates.len()])[m] = Some(b.rate_per_km_h);
        }
    }
    rows.into_iter().map(|(k, v)| (k as f64 / 1e6, v)).collect()
}

/// Model names, suffixed with their position when a model is listed twice.
fn model_labels(models: &[ModelKind]) -> Vec<String> {
    models
        .iter()
        .enumerate()
        .map(|(k, m)| {
            if models.iter().filter(|x| *x == m).count() > 1 {
                format!("{}{}", m.as_str(), k + 1)
            } else {
                m.as_str().to_string()
            }
        })
        .collect()
}

pub fn compare(
    scenario: &Path,
    base: &Scenario,
    models: &[ModelKind],
    dir: &Path,
    force: bool,
    invocation: &str,
) -> Result<()> {
    prepare(dir, &["compare.csv", RUN_MANIFEST], force)?;
    let mut m = Manifest::new(
        "compare",
        invocation,
        config_hash(&[scenario, &base.network_path])?,
        base.seed,
    );
    m.input(scenario)?;
    m.input(&base.network_path)?;
    let labels = model_labels(models);
    let mut rates = Vec::new();
    for (&model, label) in models.iter().zip(&labels) {
        let sub = dir.join(label);
        prepare(&sub, &[METRICS, EVENTS, SUMMARY, TRAJECTORIES], force)?;
        let sc = Scenario { model, ..base.clone() };
        let out = simulate(&sc)?;
        log_summary(model, &out.summary);
        for f in write_run(&sub, &sc, &out)? {
            m.output(dir, &format!("{label}/{f}"))?;
        }
        rates.push(out.rates);
    }

    let mut w = csv::Writer::from_path(dir.join("compare.csv"))?;
    let mut header = vec!["bin_density_veh_km".to_string()];
    header.extend(labels.iter().map(|l| format!("rate_{l}")));
    header.push("rel_diff".into());
    w.write_record(&header)?;
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for (center, vals) in align(&rates) {
        let mut rec = vec![format!("{center}")];
        rec.extend(vals.iter().map(|v| cell(*v)));
        let diff = match (vals[0], vals[1]) {
            (Some(a), Some(b)) => Some(relative_difference(a, b)),
            _ => None,
        };
        rec.push(cell(diff));
        w.write_record(&rec)?;
    }
    w.flush()?;
    m.output(dir, "compare.csv")?;
    m.write(dir.join(RUN_MANIFEST))
}

fn style_preset(name: &str) -> Result<DrivingStyle> {
    match DrivingStyle::preset(name) {
        Some(s) => Ok(s),
        None => bail!(Error::Config(format!("unknown style `{name}`"))),
    }
}

pub fn gen_synthetic(
    style: &str,
    n: usize,
    seed: u64,
    noise: f64,
    dir: &Path,
    force: bool,
    invocation: &str,
) -> Result<()> {
    if !(0.0..0.5).contains(&noise) {
        bail!(Error::Config(format!("noise must be in [0, 0.5), got {noise}")));
    }
    let st = style_preset(style)?;
    let cf = CarFollowModel::builtin(&st.carfollow)
        .ok_or_else(|| Error::Config(format!("unknown car-following preset `{}`", st.carfollow)))?;
    prepare(
        dir,
        &["samples.csv", "back_labels.csv", "truth.json", RUN_MANIFEST],
        force,
    )?;
    let samples = gen_samples(&st, cf, n, seed, noise)?;
    let back = gen_back_labels(st.alpha, n, seed);
    calib::write_samples(&dir.join("samples.csv"), &samples)?;
    calib::write_back_labels(&dir.join("back_labels.csv"), &back)?;
    write_json(&dir.join("truth.json"), &st)?;
    let positives = samples.iter().filter(|s| s.label == 1).count();
    info!("{n} samples for `{style}`, {positives} positive");
    let mut m = Manifest::new(
        "gen-synthetic",
        invocation,
        crate::manifest::sha256_hex(serde_json::to_string(&st)?.as_bytes()),
        seed,
    );
    for f in ["samples.csv", "back_labels.csv", "truth.json"] {
        m.output(dir, f)?;
    }
    m.write(dir.join(RUN_MANIFEST))
}

pub enum Source {
    Samples(PathBuf),
    Trajectories { trajectories: PathBuf, network: PathBuf },
}

pub struct CalibrateOptions {
    pub source: Source,
    pub back_labels: Option<PathBuf>,
    pub style: Option<String>,
    pub split: f64,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub tool_version: String,
    pub invocation: String,
    pub seed: u64,
    pub split: f64,
    pub inputs: BTreeMap<String, String>,
    pub n_samples: usize,
    pub styles: Vec<CalibrationResult>,
    pub alpha: Option<AlphaFit>,
    pub n_back_labels: usize,
}

pub fn calibrate(opts: &CalibrateOptions, dir: &Path, force: bool, invocation: &str) -> Result<()> {
    prepare(dir, &["calibration.json", "samples.csv"], force)?;
    let mut inputs = BTreeMap::new();
    let mut hash = |p: &Path| -> Result<()> {
        inputs.insert(p.display().to_string(), crate::manifest::file_hash(p)?);
        Ok(())
    };
    let (mut samples, mut back): (Vec<DecisionSample>, Vec<BackLabel>) = match &opts.source {
        Source::Samples(p) => {
            hash(p)?;
            (calib::read_samples(p)?, Vec::new())
        }
        Source::Trajectories { trajectories, network } => {
            hash(trajectories)?;
            hash(network)?;
            let net = Network::load(network)?;
            let rows = read_trajectories(trajectories)?;
            let ex = extract_events(&rows, &net, &ExtractOptions::default())?;
            info!(
                "extracted {} lane changes, {} samples, {} back labels ({} records skipped)",
                ex.changes.len(),
                ex.samples.len(),
                ex.back_labels.len(),
                ex.skipped_records
            );
            calib::write_samples(&dir.join("samples.csv"), &ex.samples)?;
            (ex.samples, ex.back_labels)
        }
    };
    if let Some(p) = &opts.back_labels {
        hash(p)?;
        back.extend(calib::read_back_labels(p)?);
    }
    if let Some(s) = &opts.style {
        samples.retain(|x| &x.style == s);
    }
    if samples.is_empty() {
        bail!(Error::Calibration("no decision samples to fit".into()));
    }
    let styles = calib::calibrate(&samples, opts.split, opts.seed, &FitOptions::default())?;
    for r in &styles {
        info!(
            "{}: mu = {:?}, beta = {:.3}, holdout loss {:.4}, accuracy {:.3} (n = {}/{})",
            r.style, r.params.mu, r.params.beta, r.holdout_loss, r.holdout_accuracy, r.n_train, r.n_test
        );
    }
    let alpha = if back.len() >= MIN_BACK_LABELS {
        let a = calib::fit_alpha(&back, 1e-9)?;
        info!("alpha = {:.5} from {} back labels", a.alpha, a.n);
        Some(a)
    } else {
        if !back.is_empty() || opts.back_labels.is_some() {
            warn!("only {} back labels; alpha not fitted", back.len());
        }
        None
    };
    let report = CalibrationReport {
        tool_version: TOOL_VERSION.into(),
        invocation: invocation.into(),
        seed: opts.seed,
        split: opts.split,
        inputs,
        n_samples: samples.len(),
        styles,
        alpha,
        n_back_labels: back.len(),
    };
    write_json(&dir.join("calibration.json"), &report)
}

#[derive(Debug, Serialize)]
struct StyleValidation {
    style: String,
    params: Params,
    #[serde(flatten)]
    validation: Validation,
}

pub fn validate(
    report: &Path,
    samples: &Path,
    style: Option<&str>,
    dir: &Path,
    force: bool,
    invocation: &str,
) -> Result<()> {
    prepare(dir, &["validation.json"], force)?;
    let text = fs::read_to_string(report).map_err(|e| Error::File {
        path: report.to_path_buf(),
        message: e.to_string(),
    })?;
    let rep: CalibrationReport =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", report.display())))?;
    let all = calib::read_samples(samples)?;
    let mut out = Vec::new();
    for r in rep.styles.iter().filter(|r| style.is_none_or(|s| s == r.style)) {
        let own: Vec<DecisionSample> = all.iter().filter(|s| s.style == r.style).cloned().collect();
        if own.is_empty() {
            warn!("no samples for style `{}`", r.style);
            continue;
        }
        let v = calib::validate(&r.params, &own)?;
        info!(
            "{}: loss {:.4}, accuracy {:.3} on {} samples",
            r.style, v.loss, v.accuracy, v.n
        );
        out.push(StyleValidation {
            style: r.style.clone(),
            params: r.params,
            validation: v,
        });
    }
    if out.is_empty() {
        bail!(Error::Calibration("no style in the report matches the samples".into()));
    }
    let mut m = Manifest::new("validate", invocation, crate::manifest::file_hash(report)?, rep.seed);
    m.input(report)?;
    m.input(samples)?;
    write_json(
        &dir.join("validation.json"),
        &serde_json::json!({ "manifest": m, "styles": out }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bin(center: f64, rate: f64) -> RateBin {
        RateBin {
            bin_density_veh_km: center,
            events: 1,
            dx_km: 1.0,
            dt_h: 1.0,
            rate_per_km_h: rate,
        }
    }

    #[test]
    fn relative_difference_is_symmetric() {
        assert_eq!(relative_difference(0.0, 0.0), 0.0);
        assert!((relative_difference(90.0, 110.0) - 0.2).abs() < 1e-12);
        assert_eq!(relative_difference(90.0, 110.0), relative_difference(110.0, 90.0));
    }

    #[test]
    fn bins_align_on_centers() {
        let rows = align(&[
            vec![bin(2.5, 10.0), bin(7.5, 20.0)],
            vec![bin(7.5, 22.0), bin(12.5, 1.0)],
        ]);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0], (2.5, vec![Some(10.0), None]));
        assert_eq!(rows[1], (7.5, vec![Some(20.0), Some(22.0)]));
        assert_eq!(rows[2].1, vec![None, Some(1.0)]);
    }

    #[test]
    fn repeated_models_get_distinct_labels() {
        let l = model_labels(&[ModelKind::Mcdm, ModelKind::Mobil, ModelKind::Mcdm]);
        assert_eq!(l, ["mcdm1", "mobil", "mcdm3"]);
    }
}
