//! Prob-back coefficient from observed returns.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::incentives::prob_back;

use super::logistic::H_EPS;

pub const ALPHA_MIN: f64 = 1e-6;
pub const ALPHA_MAX: f64 = 10.0;
/// Fewer asymmetric changes than this are refused.
pub const MIN_BACK_LABELS: usize = 30;

/// One asymmetric change: target-lane headway, remaining distance and
/// whether the vehicle came back.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackLabel {
    pub time_headway_s: f64,
    pub remaining_km: f64,
    pub back: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaFit {
    pub alpha: f64,
    pub neg_log_likelihood: f64,
    pub n: usize,
    pub at_boundary: bool,
}

pub fn neg_log_likelihood(alpha: f64, labels: &[BackLabel]) -> f64 {
    labels
        .iter()
        .map(|l| {
            let p = prob_back(alpha, l.time_headway_s, l.remaining_km).clamp(H_EPS, 1.0 - H_EPS);
            if l.back {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum()
}

/// Golden-section search on `[ALPHA_MIN, ALPHA_MAX]` for the maximum
/// likelihood `alpha`.
pub fn fit_alpha(labels: &[BackLabel], tolerance: f64) -> Result<AlphaFit> {
    if labels.len() < MIN_BACK_LABELS {
        return Err(Error::Calibration(format!(
            "fit_alpha needs at least {MIN_BACK_LABELS} asymmetric changes, got {}",
            labels.len()
        )));
    }
    let f = |a: f64| neg_log_likelihood(a, labels);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (ALPHA_MIN, ALPHA_MAX);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tolerance {
        // Ties move left: large alpha saturates the clamped likelihood.
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let mut alpha = 0.5 * (a + b);
    let mut at_boundary = false;
    for edge in [ALPHA_MIN, ALPHA_MAX] {
        if (alpha - edge).abs() <= 2.0 * tolerance || f(edge) < f(alpha) {
            alpha = edge;
            at_boundary = true;
        }
    }
    if at_boundary {
        log::warn!("alpha fit ended on the search boundary at {alpha}");
    }
    Ok(AlphaFit {
        alpha,
        neg_log_likelihood: f(alpha),
        n: labels.len(),
        at_boundary,
    })
}
