//! Scenario files: network reference, demand, style mix and run settings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::carfollow::{CarFollowModel, IdmParams};
use crate::decision::DrivingStyle;
use crate::error::{Error, Result};
use crate::incentives::SafetyParams;
use crate::mobil::MobilParams;
use crate::network::{Network, SectionIdx};

/// Default share of aggressive drivers, one in 8.4.
pub const AGGRESSIVE_SHARE: f64 = 1.0 / 8.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mcdm,
    Mobil,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Mcdm => "mcdm",
            ModelKind::Mobil => "mobil",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mcdm" => Ok(ModelKind::Mcdm),
            "mobil" => Ok(ModelKind::Mobil),
            _ => Err(Error::Config(format!("unknown model `{s}` (expected mcdm or mobil)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Measurement {
    /// Section ids of the measurement region; empty means the whole network.
    pub sections: Vec<String>,
    pub window_s: f64,
    pub bin_width_veh_km: f64,
}

impl Default for Measurement {
    fn default() -> Self {
        Measurement {
            sections: Vec::new(),
            window_s: 300.0,
            bin_width_veh_km: 5.0,
        }
    }
}

fn default_dt() -> f64 {
    0.1
}
fn default_speed_sd() -> f64 {
    0.1
}
fn default_nav_update() -> f64 {
    10.0
}
fn default_vehicle_length() -> f64 {
    5.0
}
fn default_model() -> ModelKind {
    ModelKind::Mcdm
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    network: PathBuf,
    #[serde(default = "default_model")]
    model: ModelKind,
    #[serde(default)]
    demand_vph: Option<f64>,
    #[serde(default)]
    demand_sweep_vph: Option<Vec<f64>>,
    #[serde(default)]
    style_mix: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    styles: BTreeMap<String, Value>,
    #[serde(default)]
    carfollow: BTreeMap<String, CarFollowModel>,
    #[serde(default)]
    destinations: BTreeMap<String, f64>,
    duration_s: f64,
    #[serde(default = "default_dt")]
    dt_s: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    measurement: Measurement,
    #[serde(default)]
    mobil: MobilParams,
    #[serde(default)]
    safety: SafetyParams,
    #[serde(default = "default_speed_sd")]
    speed_factor_sd: f64,
    #[serde(default = "default_nav_update")]
    nav_update_s: f64,
    #[serde(default = "default_vehicle_length")]
    vehicle_length_m: f64,
    #[serde(default)]
    trajectory_interval_s: Option<f64>,
}

/// A validated scenario with its network loaded.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub network: Network,
    pub network_path: PathBuf,
    pub model: ModelKind,
    /// One run per entry; a plain scenario has a single level.
    pub demand_levels: Vec<f64>,
    /// Styles present in the fleet, with their share.
    pub styles: Vec<(DrivingStyle, f64)>,
    pub carfollow: BTreeMap<String, CarFollowModel>,
    /// Destination weights per exit section; empty means uniform.
    pub destinations: BTreeMap<SectionIdx, f64>,
    pub duration_s: f64,
    pub dt_s: f64,
    pub seed: u64,
    pub measurement: Measurement,
    pub region: Vec<SectionIdx>,
    pub mobil: MobilParams,
    pub safety: SafetyParams,
    pub speed_factor_sd: f64,
    pub nav_update_s: f64,
    pub vehicle_length_m: f64,
    pub trajectory_interval_s: Option<f64>,
}

fn merge(base: &mut Value, over: &Value) {
    if let (Value::Object(b), Value::Object(o)) = (base, over) {
        for (k, v) in o {
            b.insert(k.clone(), v.clone());
        }
    }
}

fn resolve_style(name: &str, overrides: Option<&Value>) -> Result<DrivingStyle> {
    let base_name = overrides
        .and_then(|o| o.get("base"))
        .and_then(Value::as_str)
        .unwrap_or(name);
    let base =
        DrivingStyle::preset(base_name).ok_or_else(|| Error::Config(format!("unknown style preset `{base_name}`")))?;
    let mut v = serde_json::to_value(&base)?;
    if let Some(o) = overrides {
        let mut o = o.clone();
        if let Value::Object(m) = &mut o {
            m.remove("base");
        } else {
            return Err(Error::Config(format!("style `{name}` must be a JSON object")));
        }
        merge(&mut v, &o);
    }
    v["name"] = Value::String(name.to_string());
    let style: DrivingStyle = serde_json::from_value(v).map_err(|e| Error::Config(format!("style `{name}`: {e}")))?;
    style.validate()?;
    Ok(style)
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::file(path, format!("cannot read scenario file: {e}")))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json_str(&text, base).map_err(|e| match e {
            Error::Json(j) => Error::file(path, format!("line {}: {j}", j.line())),
            Error::Config(m) => Error::file(path, m),
            other => other,
        })
    }

    /// Parses a scenario; the network path is resolved against `base_dir`.
    pub fn from_json_str(text: &str, base_dir: &Path) -> Result<Self> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        let network_path = base_dir.join(&file.network);
        let network = Network::load(&network_path)?;

        let demand_levels = match (file.demand_vph, file.demand_sweep_vph) {
            (Some(d), None) => vec![d],
            (None, Some(s)) if !s.is_empty() => s,
            _ => {
                return Err(Error::Config(
                    "exactly one of demand_vph or a non-empty demand_sweep_vph is required".into(),
                ))
            }
        };
        if demand_levels.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(Error::Config("demand must be finite and >= 0".into()));
        }

        let mix = file.style_mix.unwrap_or_else(|| {
            BTreeMap::from([
                ("aggressive".to_string(), AGGRESSIVE_SHARE),
                ("conservative".to_string(), 1.0 - AGGRESSIVE_SHARE),
            ])
        });
        let mut styles = Vec::new();
        for (name, share) in &mix {
            if !(*share >= 0.0) {
                return Err(Error::Config(format!("style share of `{name}` must be >= 0")));
            }
            styles.push((resolve_style(name, file.styles.get(name))?, *share));
        }
        for name in file.styles.keys() {
            if !mix.contains_key(name) {
                return Err(Error::Config(format!(
                    "style `{name}` is configured but not in style_mix"
                )));
            }
        }

        let mut carfollow: BTreeMap<String, CarFollowModel> = ["idm", "fvdm"]
            .iter()
            .map(|n| (n.to_string(), CarFollowModel::builtin(n).unwrap()))
            .collect();
        for (name, m) in file.carfollow {
            m.validate()?;
            carfollow.insert(name, m);
        }

        let mut destinations = BTreeMap::new();
        for (id, w) in &file.destinations {
            let s = network.section_idx(id)?;
            if !network.is_exit(s) {
                return Err(Error::Config(format!("destination `{id}` is not an exit section")));
            }
            if !(*w >= 0.0) {
                return Err(Error::Config(format!("destination weight of `{id}` must be >= 0")));
            }
            destinations.insert(s, *w);
        }

        let region = if file.measurement.sections.is_empty() {
            (0..network.sections().len()).map(SectionIdx).collect()
        } else {
            file.measurement
                .sections
                .iter()
                .map(|id| network.section_idx(id))
                .collect::<Result<Vec<_>>>()?
        };

        let sc = Scenario {
            network,
            network_path,
            model: file.model,
            demand_levels,
            styles,
            carfollow,
            destinations,
            duration_s: file.duration_s,
            dt_s: file.dt_s,
            seed: file.seed,
            measurement: file.measurement,
            region,
            mobil: file.mobil,
            safety: file.safety,
            speed_factor_sd: file.speed_factor_sd,
            nav_update_s: file.nav_update_s,
            vehicle_length_m: file.vehicle_length_m,
            trajectory_interval_s: file.trajectory_interval_s,
        };
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.dt_s > 0.0 && self.dt_s <= 0.5) {
            return cfg("dt_s must be in (0, 0.5]");
        }
        if !(self.duration_s >= 0.0) || !self.duration_s.is_finite() {
            return cfg("duration_s must be finite and >= 0");
        }
        let total: f64 = self.styles.iter().map(|s| s.1).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("style_mix fractions sum to {total}, expected 1")));
        }
        for (s, _) in &self.styles {
            s.validate()?;
            if !self.carfollow.contains_key(&s.carfollow) {
                return Err(Error::Config(format!(
                    "style `{}` uses unknown carfollow preset `{}`",
                    s.name, s.carfollow
                )));
            }
        }
        if !(self.measurement.window_s > 0.0) || !(self.measurement.bin_width_veh_km > 0.0) {
            return cfg("measurement window_s and bin_width_veh_km must be > 0");
        }
        if !(self.speed_factor_sd >= 0.0) || !(self.nav_update_s > 0.0) || !(self.vehicle_length_m > 0.0) {
            return cfg("speed_factor_sd >= 0, nav_update_s > 0 and vehicle_length_m > 0 are required");
        }
        if let Some(t) = self.trajectory_interval_s {
            if !(t > 0.0) {
                return cfg("trajectory_interval_s must be > 0");
            }
        }
        if !self.destinations.is_empty() && self.destinations.values().sum::<f64>() <= 0.0 {
            return cfg("destination weights must not all be zero");
        }
        self.mobil.validate()?;
        self.safety.validate()
    }

    pub fn style(&self, name: &str) -> Option<&DrivingStyle> {
        self.styles.iter().map(|s| &s.0).find(|s| s.name == name)
    }

    pub fn style_mut(&mut self, name: &str) -> Option<&mut DrivingStyle> {
        self.styles.iter_mut().map(|s| &mut s.0).find(|s| s.name == name)
    }

    /// Replaces the fleet composition; styles not yet present are taken from
    /// the presets.
    pub fn set_style_mix(&mut self, mix: &[(&str, f64)]) -> Result<()> {
        let mut styles = Vec::new();
        for (name, share) in mix {
            let s = match self.style(name) {
                Some(s) => s.clone(),
                None => resolve_style(name, None)?,
            };
            styles.push((s, *share));
        }
        self.styles = styles;
        self.validate()
    }

    /// Car-following model of a style, tuned to a driver's desired speed.
    pub fn carfollow_for(&self, style: &DrivingStyle, desired_speed: f64) -> CarFollowModel {
        self.carfollow[&style.carfollow].with_desired_speed(desired_speed)
    }

    /// IDM parameters used for gap checks and MOBIL evaluations.
    pub fn idm_for(&self, style: &DrivingStyle, desired_speed: f64) -> IdmParams {
        let base = match self.carfollow[&style.carfollow] {
            CarFollowModel::Idm(p) => p,
            CarFollowModel::Fvdm(_) => IdmParams::default(),
        };
        IdmParams {
            v0: desired_speed,
            ..base
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::fixtures::FIG1;

    fn dir() -> tempfile::TempDir {
        let d = tempfile::tempdir().unwrap();
        std::fs::write(d.path().join("net.json"), FIG1).unwrap();
        d
    }

    #[test]
    fn defaults_and_overrides() {
        let d = dir();
        let sc = Scenario::from_json_str(
            r#"{"network": "net.json", "demand_vph": 600, "duration_s": 60,
                "styles": {"aggressive": {"mu_route": 2.52}}}"#,
            d.path(),
        )
        .unwrap();
        assert_eq!(sc.model, ModelKind::Mcdm);
        assert_eq!(sc.dt_s, 0.1);
        assert_eq!(sc.style("aggressive").unwrap().mu_route, 2.52);
        assert_eq!(sc.style("aggressive").unwrap().mu_speed, 0.58);
        assert!((sc.styles[0].1 - 1.0 / 8.4).abs() < 1e-15);
        assert_eq!(sc.region.len(), 3);
    }

    #[test]
    fn rejects_bad_config() {
        let d = dir();
        let bad = [
            r#"{"network": "net.json", "demand_vph": 600, "duration_s": 60, "dt_s": 0.6}"#,
            r#"{"network": "net.json", "demand_vph": 600, "duration_s": 60, "style_mix": {"aggressive": 0.5}}"#,
            r#"{"network": "net.json", "duration_s": 60}"#,
            r#"{"network": "net.json", "demand_vph": 600, "duration_s": 60, "styles": {"aggressive": {"carfollow": "gipps"}}}"#,
            r#"{"network": "net.json", "demand_vph": 600, "duration_s": 60, "style_mix": {"reckless": 1.0}}"#,
            r#"{"network": "net.json", "demand_vph": 600, "duration_s": 60, "model": "gipps"}"#,
            r#"{"network": "missing.json", "demand_vph": 600, "duration_s": 60}"#,
        ];
        for b in bad {
            let e = Scenario::from_json_str(b, d.path()).unwrap_err();
            assert!(e.is_config(), "{b}: {e}");
        }
        let e = Scenario::from_json_str(bad[6], d.path()).unwrap_err().to_string();
        assert!(e.contains("missing.json"), "{e}");
    }
}
