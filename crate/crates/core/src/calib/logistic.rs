//! Logistic model over incentive yields and its gradient-descent fit.

use serde::{Deserialize, Serialize};

use crate::decision::YIELD_CAP;
use crate::error::{Error, Result};
use crate::incentives::COMFORT_HEADWAY_FLOOR;

use super::DecisionSample;

/// Probabilities are clamped to `[H_EPS, 1 - H_EPS]` inside the loss.
pub const H_EPS: f64 = 1e-12;
/// Lower bound on the comfort exponent during the fit. At zero the comfort
/// feature is constant and collinear with the intercept.
pub const BETA_MIN: f64 = 0.05;

/// `1 / (1 + e^-w)` without overflow for large `|w|`.
pub fn sigmoid(w: f64) -> f64 {
    if w >= 0.0 {
        1.0 / (1.0 + (-w).exp())
    } else {
        let e = w.exp();
        e / (1.0 + e)
    }
}

/// Cross-entropy of a prediction `h` for label `y`.
pub fn logistic_loss(h: f64, y: f64) -> f64 {
    let h = h.clamp(H_EPS, 1.0 - H_EPS);
    -y * h.ln() - (1.0 - y) * (1.0 - h).ln()
}

/// Intercept, weights in incentive order (route, speed, comfort, courtesy)
/// and the comfort exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub bias: f64,
    pub mu: [f64; 4],
    pub beta: f64,
}

impl Params {
    pub const LEN: usize = 6;

    pub fn to_vec(&self) -> [f64; 6] {
        [self.bias, self.mu[0], self.mu[1], self.mu[2], self.mu[3], self.beta]
    }

    pub fn from_vec(t: &[f64; 6]) -> Self {
        Params {
            bias: t[0],
            mu: [t[1], t[2], t[3], t[4]],
            beta: t[5],
        }
    }
}

/// Comfort yield for exponent `beta` and its derivative in `beta`.
pub fn comfort_feature(s: &DecisionSample, beta: f64) -> (f64, f64) {
    let jt = s.th_target.max(COMFORT_HEADWAY_FLOOR).powf(-beta);
    let jc = s.th_current.max(COMFORT_HEADWAY_FLOOR).powf(-beta);
    let c = -(jt + s.p_back * jc);
    if c.abs() > YIELD_CAP {
        return (c.clamp(-YIELD_CAP, YIELD_CAP), 0.0);
    }
    let lt = s.th_target.max(COMFORT_HEADWAY_FLOOR).ln();
    let lc = s.th_current.max(COMFORT_HEADWAY_FLOOR).ln();
    (c, jt * lt + s.p_back * jc * lc)
}

/// Lane-change interest `w` of one sample.
pub fn interest(p: &Params, s: &DecisionSample) -> f64 {
    let (c, _) = comfort_feature(s, p.beta);
    p.bias + p.mu[0] * s.a_route + p.mu[1] * s.b_speed + p.mu[2] * c + p.mu[3] * s.d_courtesy
}

/// `ln(1 + e^w) - y w`, the cross-entropy written on `w`.
fn loss_on_w(w: f64, y: f64) -> f64 {
    let softplus = if w > 0.0 {
        w + (-w).exp().ln_1p()
    } else {
        w.exp().ln_1p()
    };
    softplus - y * w
}

/// Mean loss `J`.
pub fn loss(p: &Params, samples: &[DecisionSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| loss_on_w(interest(p, s), s.y())).sum::<f64>() / samples.len() as f64
}

/// Mean loss and its gradient in `(bias, mu, beta)`.
pub fn loss_and_gradient(p: &Params, samples: &[DecisionSample]) -> (f64, [f64; 6]) {
    let mut j = 0.0;
    let mut g = [0.0; 6];
    for s in samples {
        let (c, dc) = comfort_feature(s, p.beta);
        let w = p.bias + p.mu[0] * s.a_route + p.mu[1] * s.b_speed + p.mu[2] * c + p.mu[3] * s.d_courtesy;
        let y = s.y();
        j += loss_on_w(w, y);
        let r = sigmoid(w) - y;
        g[0] += r;
        g[1] += r * s.a_route;
        g[2] += r * s.b_speed;
        g[3] += r * c;
        g[4] += r * s.d_courtesy;
        g[5] += r * p.mu[2] * dc;
    }
    let n = samples.len().max(1) as f64;
    for x in &mut g {
        *x /= n;
    }
    (j / n, g)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOptions {
    pub learning_rate: f64,
    pub max_iter: usize,
    /// Converged when an accepted step changes `J` by less than this.
    pub tolerance: f64,
    pub beta_starts: Vec<f64>,
    /// Step multiplier after an accepted step; 1 keeps the rate fixed.
    pub growth: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            learning_rate: 0.1,
            max_iter: 100_000,
            tolerance: 1e-9,
            beta_starts: vec![1.0, 2.0, 3.0],
            growth: 1.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub params: Params,
    pub loss: f64,
    pub iterations: usize,
    pub converged: bool,
    pub beta_start: f64,
}

fn project(t: &mut [f64; 6]) {
    t[5] = t[5].max(BETA_MIN);
}

/// Full-batch gradient descent from one starting point. Rejected steps halve
/// the rate, so accepted iterates never increase `J`.
pub fn descend(samples: &[DecisionSample], start: Params, opts: &FitOptions) -> FitOutcome {
    let mut t = start.to_vec();
    project(&mut t);
    let (mut j, mut g) = loss_and_gradient(&Params::from_vec(&t), samples);
    let mut lr = opts.learning_rate;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut accepted = None;
        while lr > 1e-14 {
            let mut cand = t;
            for k in 0..Params::LEN {
                cand[k] -= lr * g[k];
            }
            project(&mut cand);
            let p = Params::from_vec(&cand);
            let jc = loss(&p, samples);
            if jc <= j {
                accepted = Some((cand, jc));
                break;
            }
            lr *= 0.5;
        }
        let Some((cand, jc)) = accepted else {
            converged = true;
            break;
        };
        let dj = j - jc;
        t = cand;
        let (jn, gn) = loss_and_gradient(&Params::from_vec(&t), samples);
        j = jn;
        g = gn;
        lr *= opts.growth;
        if dj < opts.tolerance {
            converged = true;
            break;
        }
    }
    FitOutcome {
        params: Params::from_vec(&t),
        loss: j,
        iterations,
        converged,
        beta_start: start.beta,
    }
}

/// Best fit over the configured starting values of `beta`.
pub fn fit(samples: &[DecisionSample], opts: &FitOptions) -> Result<FitOutcome> {
    let ones = samples.iter().filter(|s| s.label == 1).count();
    if samples.is_empty() || ones == 0 || ones == samples.len() {
        return Err(Error::Calibration(format!(
            "need both labels to fit, got {ones} changes out of {} samples",
            samples.len()
        )));
    }
    let mut best: Option<FitOutcome> = None;
    for &b in &opts.beta_starts {
        let start = Params {
            bias: 0.0,
            mu: [0.0; 4],
            beta: b,
        };
        let out = descend(samples, start, opts);
        log::debug!(
            "beta start {b}: J={:.6} beta={:.4} after {} iterations",
            out.loss,
            out.params.beta,
            out.iterations
        );
        if best.as_ref().is_none_or(|o| out.loss < o.loss) {
            best = Some(out);
        }
    }
    Ok(best.expect("at least one beta start"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub mean_predicted: f64,
    pub observed_rate: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub loss: f64,
    pub accuracy: f64,
    pub n: usize,
    /// Deciles of predicted probability.
    pub curve: Vec<CurvePoint>,
}

pub fn validate(p: &Params, holdout: &[DecisionSample]) -> Result<Validation> {
    if holdout.is_empty() {
        return Err(Error::Calibration("holdout set is empty".into()));
    }
    let mut pred: Vec<(f64, f64)> = holdout.iter().map(|s| (sigmoid(interest(p, s)), s.y())).collect();
    let n = pred.len();
    let loss = pred.iter().map(|&(h, y)| logistic_loss(h, y)).sum::<f64>() / n as f64;
    let correct = pred.iter().filter(|&&(h, y)| (h > 0.5) == (y == 1.0)).count();
    pred.sort_by(|a, b| a.0.total_cmp(&b.0));
    let curve = (0..10)
        .filter_map(|d| {
            let chunk = &pred[d * n / 10..(d + 1) * n / 10];
            (!chunk.is_empty()).then(|| CurvePoint {
                mean_predicted: chunk.iter().map(|x| x.0).sum::<f64>() / chunk.len() as f64,
                observed_rate: chunk.iter().map(|x| x.1).sum::<f64>() / chunk.len() as f64,
                count: chunk.len(),
            })
        })
        .collect();
    Ok(Validation {
        loss,
        accuracy: correct as f64 / n as f64,
        n,
        curve,
    })
}
