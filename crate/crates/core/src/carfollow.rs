//! Longitudinal car-following models: IDM, the optimal-velocity function and
//! the full velocity difference model built on it.
//!
//! All functions are pure. Gaps are bumper-to-bumper distances in meters and
//! `dv` is the approach rate `v_ego - v_leader` (positive when closing in).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integration bounds on acceleration, m/s².
pub const ACCEL_MIN: f64 = -9.0;
pub const ACCEL_MAX: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    /// Maximum acceleration.
    pub a: f64,
    /// Comfortable deceleration.
    pub b: f64,
    /// Desired speed.
    pub v0: f64,
    /// Safe time headway.
    pub t_headway: f64,
    /// Jam distance.
    pub s0: f64,
    /// Acceleration exponent.
    pub delta: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        IdmParams {
            a: 1.4,
            b: 2.0,
            v0: 30.0,
            t_headway: 1.5,
            s0: 2.0,
            delta: 4.0,
        }
    }
}

impl IdmParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.a, self.b, self.v0, self.t_headway, self.s0];
        if positive.iter().any(|x| !(*x > 0.0)) || !(self.delta >= 1.0) {
            return Err(Error::Config(format!(
                "IDM parameters need a, b, v0, T, s0 > 0 and delta >= 1: {self:?}"
            )));
        }
        Ok(())
    }

    /// Desired dynamic gap, floored at the jam distance.
    pub fn desired_gap(&self, v: f64, dv: f64) -> f64 {
        let s = self.s0 + v * self.t_headway + v * dv / (2.0 * (self.a * self.b).sqrt());
        s.max(self.s0)
    }
}

/// IDM acceleration. Use `gap = f64::INFINITY` and `dv = 0` for a free road.
pub fn idm_accel(p: &IdmParams, v: f64, gap: f64, dv: f64) -> Result<f64> {
    if !(gap > 0.0) {
        return Err(Error::Domain(format!("IDM gap must be > 0, got {gap}")));
    }
    let free = 1.0 - (v / p.v0).powf(p.delta);
    let interaction = if gap.is_infinite() {
        0.0
    } else {
        (p.desired_gap(v, dv) / gap).powi(2)
    };
    Ok(p.a * (free - interaction))
}

/// Speed at which IDM acceleration vanishes behind a leader at constant gap.
/// Zero when the gap does not exceed the jam distance.
pub fn idm_equilibrium_speed(p: &IdmParams, gap: f64) -> f64 {
    if gap.is_infinite() {
        return p.v0;
    }
    if gap <= p.s0 {
        return 0.0;
    }
    let g = |v: f64| 1.0 - (v / p.v0).powf(p.delta) - ((p.s0 + v * p.t_headway) / gap).powi(2);
    let dg = |v: f64| {
        -p.delta * v.max(0.0).powf(p.delta - 1.0) / p.v0.powf(p.delta)
            - 2.0 * p.t_headway * (p.s0 + v * p.t_headway) / (gap * gap)
    };
    // g is strictly decreasing on [0, v0] with g(0) > 0 > g(v0).
    let (mut lo, mut hi) = (0.0, p.v0);
    let mut v = 0.5 * p.v0;
    for _ in 0..100 {
        let gv = g(v);
        if gv.abs() < 1e-14 {
            break;
        }
        if gv > 0.0 {
            lo = v;
        } else {
            hi = v;
        }
        let step = gv / dg(v);
        let candidate = v - step;
        v = if candidate > lo && candidate < hi {
            candidate
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-15 {
            break;
        }
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OvmParams {
    pub v1: f64,
    pub v2: f64,
    /// 1/m
    pub c1: f64,
    pub c2: f64,
    /// Vehicle length entering the optimal-velocity function.
    pub lc: f64,
    /// Relaxation sensitivity toward the optimal velocity, 1/s.
    pub kappa: f64,
    /// Velocity-difference gain, 1/s.
    pub lambda: f64,
}

impl Default for OvmParams {
    fn default() -> Self {
        OvmParams {
            v1: 6.75,
            v2: 7.91,
            c1: 0.13,
            c2: 1.57,
            lc: 5.0,
            kappa: 0.41,
            lambda: 0.5,
        }
    }
}

impl OvmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.v1 + self.v2 > 0.0) || !(self.c1 > 0.0) || self.kappa < 0.0 || self.lambda < 0.0 {
            return Err(Error::Config(format!(
                "OVM parameters need V1 + V2 > 0, C1 > 0, kappa, lambda >= 0: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn max_speed(&self) -> f64 {
        self.v1 + self.v2
    }

    /// Rescale V1 and V2 so that the asymptotic speed equals `v_max`.
    pub fn scaled_to(&self, v_max: f64) -> Self {
        let k = v_max / self.max_speed();
        OvmParams {
            v1: self.v1 * k,
            v2: self.v2 * k,
            ..*self
        }
    }
}

/// Optimal velocity `V1 + V2 tanh(C1 (s - lc) - C2)`, floored at zero.
pub fn ovm_velocity(p: &OvmParams, gap: f64) -> f64 {
    if gap.is_infinite() {
        return p.max_speed().max(0.0);
    }
    (p.v1 + p.v2 * (p.c1 * (gap - p.lc) - p.c2).tanh()).max(0.0)
}

/// FVDM acceleration `kappa (V(s) - v) - lambda dv`.
pub fn fvdm_accel(p: &OvmParams, v: f64, gap: f64, dv: f64) -> Result<f64> {
    if !(gap > 0.0) {
        return Err(Error::Domain(format!("FVDM gap must be > 0, got {gap}")));
    }
    Ok(p.kappa * (ovm_velocity(p, gap) - v) - p.lambda * dv)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum CarFollowModel {
    Idm(IdmParams),
    Fvdm(OvmParams),
}

impl CarFollowModel {
    /// Named built-in parameter set.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "idm" => Some(CarFollowModel::Idm(IdmParams::default())),
            "fvdm" => Some(CarFollowModel::Fvdm(OvmParams::default())),
            _ => None,
        }
    }

    /// Tune the model to a driver's desired speed: IDM takes it as `v0`, the
    /// optimal-velocity curve is rescaled to saturate at it.
    pub fn with_desired_speed(self, v: f64) -> Self {
        match self {
            CarFollowModel::Idm(p) => CarFollowModel::Idm(IdmParams { v0: v, ..p }),
            CarFollowModel::Fvdm(p) => CarFollowModel::Fvdm(p.scaled_to(v)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CarFollowModel::Idm(p) => p.validate(),
            CarFollowModel::Fvdm(p) => p.validate(),
        }
    }

    pub fn desired_speed(&self) -> f64 {
        match self {
            CarFollowModel::Idm(p) => p.v0,
            CarFollowModel::Fvdm(p) => p.max_speed(),
        }
    }

    pub fn accel(&self, v: f64, gap: f64, dv: f64) -> Result<f64> {
        match self {
            CarFollowModel::Idm(p) => idm_accel(p, v, gap, dv),
            CarFollowModel::Fvdm(p) => fvdm_accel(p, v, gap, dv),
        }
    }

    /// Steady-state speed at a constant gap (`f64::INFINITY` for free road).
    pub fn equilibrium_speed(&self, gap: f64) -> f64 {
        match self {
            CarFollowModel::Idm(p) => idm_equilibrium_speed(p, gap),
            CarFollowModel::Fvdm(p) => ovm_velocity(p, gap),
        }
    }

    pub fn jam_distance(&self) -> f64 {
        match self {
            CarFollowModel::Idm(p) => p.s0,
            CarFollowModel::Fvdm(_) => IdmParams::default().s0,
        }
    }
}
