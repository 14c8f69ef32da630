//! Calibration of style parameters from labeled lane-change decisions.

pub mod alpha;
pub mod extract;
pub mod logistic;
pub mod synth;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::io::write_rows;
pub use alpha::{fit_alpha, AlphaFit, BackLabel};
pub use logistic::{fit, logistic_loss, sigmoid, validate, FitOptions, FitOutcome, Params, Validation};

/// One decision instant for one candidate lane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionSample {
    pub style: String,
    /// Route yield.
    pub a_route: f64,
    /// Speed yield.
    pub b_speed: f64,
    /// Courtesy yield.
    pub d_courtesy: f64,
    /// Target and current lane headways; the comfort yield is rebuilt from
    /// them for any exponent.
    pub th_target: f64,
    pub th_current: f64,
    pub p_back: f64,
    pub label: u8,
}

impl DecisionSample {
    pub fn y(&self) -> f64 {
        f64::from(self.label)
    }

    fn check(&self) -> std::result::Result<(), String> {
        let finite = [
            self.a_route,
            self.b_speed,
            self.d_courtesy,
            self.th_target,
            self.th_current,
            self.p_back,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !finite {
            return Err("non-finite feature".into());
        }
        if self.label > 1 {
            return Err(format!("label must be 0 or 1, got {}", self.label));
        }
        if !(self.th_target > 0.0 && self.th_current > 0.0) || !(0.0..=1.0).contains(&self.p_back) {
            return Err("headways must be > 0 and p_back in [0, 1]".into());
        }
        Ok(())
    }
}

const SAMPLE_COLUMNS: [&str; 8] = [
    "style",
    "a_route",
    "b_speed",
    "d_courtesy",
    "th_target",
    "th_current",
    "p_back",
    "label",
];
const BACK_COLUMNS: [&str; 3] = ["time_headway_s", "remaining_km", "back"];

pub fn write_samples(path: &Path, samples: &[DecisionSample]) -> Result<()> {
    write_rows(path, &SAMPLE_COLUMNS, samples)
}

pub fn write_back_labels(path: &Path, labels: &[BackLabel]) -> Result<()> {
    write_rows(path, &BACK_COLUMNS, labels)
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path, header: &[&str]) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::file(path, e.to_string()))?;
    let found = r.headers()?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(Error::file(
            path,
            format!(
                "expected columns {}, found {}",
                header.join(","),
                found.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::file(path, format!("line {}: {e}", i + 2))))
        .collect()
}

pub fn read_samples(path: &Path) -> Result<Vec<DecisionSample>> {
    let rows: Vec<DecisionSample> = read_rows(path, &SAMPLE_COLUMNS)?;
    for (i, s) in rows.iter().enumerate() {
        s.check()
            .map_err(|m| Error::file(path, format!("line {}: {m}", i + 2)))?;
    }
    Ok(rows)
}

pub fn read_back_labels(path: &Path) -> Result<Vec<BackLabel>> {
    read_rows(path, &BACK_COLUMNS)
}

/// Seeded shuffle, then the first `fraction` of the samples for training.
pub fn split(
    samples: &[DecisionSample],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<DecisionSample>, Vec<DecisionSample>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split must be in (0, 1), got {fraction}")));
    }
    let mut v = samples.to_vec();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = (fraction * v.len() as f64).round() as usize;
    let test = v.split_off(n);
    Ok((v, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub style: String,
    pub params: Params,
    pub train_loss: f64,
    pub holdout_loss: f64,
    pub holdout_accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Weights that came out negative.
    pub negative_weights: Vec<String>,
    pub holdout: Validation,
}

/// Fits each style tag separately on a seeded train/holdout split.
pub fn calibrate(
    samples: &[DecisionSample],
    fraction: f64,
    seed: u64,
    opts: &FitOptions,
) -> Result<Vec<CalibrationResult>> {
    let mut styles: Vec<&str> = samples.iter().map(|s| s.style.as_str()).collect();
    styles.sort_unstable();
    styles.dedup();
    let mut out = Vec::new();
    for style in styles {
        let own: Vec<DecisionSample> = samples.iter().filter(|s| s.style == style).cloned().collect();
        let (train, test) = split(&own, fraction, seed)?;
        let fit = fit(&train, opts).map_err(|e| Error::Calibration(format!("style `{style}`: {e}")))?;
        let holdout = validate(&fit.params, &test)?;
        let negative_weights = ["mu_route", "mu_speed", "mu_comfort", "mu_courtesy"]
            .iter()
            .zip(fit.params.mu)
            .filter(|(_, m)| *m < 0.0)
            .map(|(n, _)| n.to_string())
            .collect::<Vec<_>>();
        if !negative_weights.is_empty() {
            log::warn!("style `{style}`: negative weights {negative_weights:?}");
        }
        out.push(CalibrationResult {
            style: style.to_string(),
            params: fit.params,
            train_loss: fit.loss,
            holdout_loss: holdout.loss,
            holdout_accuracy: holdout.accuracy,
            n_train: train.len(),
            n_test: test.len(),
            iterations: fit.iterations,
            converged: fit.converged,
            negative_weights,
            holdout,
        });
    }
    Ok(out)
}
