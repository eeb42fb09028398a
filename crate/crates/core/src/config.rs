//! Declarative experiment configuration: parsing, validation with field
//! paths, bundled presets and construction of the runtime objects.

use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::conditioning::{LinearAuxiliary, ObservationScheme};
use crate::error::{BridgeError, Result};
use crate::grid::TimeGrid;
use crate::guided::GuidedSystem;
use crate::linalg;
use crate::neural::{default_cap, Activation, MlpArchitecture, NeuralDrift};
use crate::sde::SdeModel;
use crate::training::TrainConfig;
use crate::zoo::{auxiliary_for, ellipse, ZooModel};

/// Ellipse of landmarks, one per model landmark, at equal angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipseSpec {
    pub a: f64,
    pub b: f64,
    #[serde(default)]
    pub center: [f64; 2],
}

/// A state vector given explicitly or generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateSpec {
    Values(Vec<f64>),
    Ellipse { ellipse: EllipseSpec },
}

impl StateSpec {
    fn resolve(&self, model: &ZooModel) -> std::result::Result<Vec<f64>, String> {
        match self {
            StateSpec::Values(v) => Ok(v.clone()),
            StateSpec::Ellipse { ellipse: e } => match model {
                ZooModel::Landmark(lm) if lm.dim == 2 => Ok(ellipse(lm.n, e.a, e.b, e.center)),
                _ => Err("ellipse states need a planar landmark model".into()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditioningConfig {
    /// Observation matrix rows; the identity when omitted.
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub l: Option<Vec<Vec<f64>>>,
    pub v: StateSpec,
    pub eps2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(rename = "T")]
    pub t_end: f64,
    #[serde(rename = "M")]
    pub steps: usize,
}

/// Constant auxiliary coefficients replacing the model's default choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuxiliaryConfig {
    pub beta: Vec<f64>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcnConfig {
    pub eta: f64,
    pub iters: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
}

impl Default for PcnConfig {
    fn default() -> Self {
        Self {
            eta: 0.9,
            iters: 10_000,
            burn_in: 5_000,
            thin: 1,
            chains: 1,
        }
    }
}

fn default_output_dir() -> String {
    "out".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ZooModel,
    pub x0: StateSpec,
    pub conditioning: ConditioningConfig,
    pub grid: GridConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auxiliary: Option<AuxiliaryConfig>,
    pub net: NetConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub pcn: PcnConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
}

/// A validation failure at a dotted field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    Io(String),
    Parse(String),
    Invalid(Vec<FieldError>),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(e) => write!(f, "cannot read config: {e}"),
            ConfigError::Parse(e) => write!(f, "malformed config: {e}"),
            ConfigError::Invalid(errs) => {
                write!(f, "invalid config:")?;
                for e in errs {
                    write!(f, "\n  {}: {}", e.field, e.message)?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    /// Field paths of all validation failures.
    pub fn fields(&self) -> Vec<&str> {
        match self {
            ConfigError::Invalid(errs) => errs.iter().map(|e| e.field.as_str()).collect(),
            _ => Vec::new(),
        }
    }
}

struct Problems(Vec<FieldError>);

impl Problems {
    fn add(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.0.push(FieldError {
            field: field.into(),
            message: message.into(),
        });
    }
}

fn rectangular(rows: &[Vec<f64>], cols: usize) -> bool {
    !rows.is_empty() && rows.iter().all(|r| r.len() == cols)
}

impl ExperimentConfig {
    /// Every violated invariant, in field order.
    pub fn validate(&self) -> std::result::Result<(), ConfigError> {
        let mut p = Problems(Vec::new());
        for (field, msg) in self.model.validate() {
            p.add(format!("model.{field}"), msg);
        }
        let d = self.model.dim();
        let d_w = self.model.noise_dim();

        match self.x0.resolve(&self.model) {
            Ok(x0) if x0.len() != d => p.add("x0", format!("expected {d} entries, got {}", x0.len())),
            Ok(x0) if x0.iter().any(|v| !v.is_finite()) => p.add("x0", "entries must be finite"),
            Ok(_) => {}
            Err(e) => p.add("x0", e),
        }

        if !(self.grid.t_end > 0.0 && self.grid.t_end.is_finite()) {
            p.add("grid.T", format!("must be positive, got {}", self.grid.t_end));
        }
        if self.grid.steps == 0 {
            p.add("grid.M", "need at least one step");
        }

        let c = &self.conditioning;
        let mut obs_rows = d;
        if let Some(l) = &c.l {
            if !rectangular(l, d) {
                p.add("conditioning.L", format!("every row needs {d} columns, one per state coordinate"));
            } else {
                obs_rows = l.len();
                if linalg::rank(&linalg::from_rows(l)) < l.len() {
                    p.add("conditioning.L", "rows must be linearly independent");
                }
            }
        }
        match c.v.resolve(&self.model) {
            Ok(v) if v.len() != obs_rows => {
                p.add("conditioning.v", format!("expected {obs_rows} entries, got {}", v.len()))
            }
            Ok(_) => {}
            Err(e) => p.add("conditioning.v", e),
        }
        if !(c.eps2 > 0.0 && c.eps2.is_finite()) {
            p.add("conditioning.eps2", format!("must be positive, got {}", c.eps2));
        }

        match &self.auxiliary {
            Some(aux) => {
                if aux.beta.len() != d {
                    p.add("auxiliary.beta", format!("expected {d} entries"));
                }
                if !rectangular(&aux.b, d) || aux.b.len() != d {
                    p.add("auxiliary.B", format!("expected a {d}x{d} matrix"));
                }
                if !rectangular(&aux.sigma, d_w) || aux.sigma.len() != d {
                    p.add("auxiliary.sigma", format!("expected a {d}x{d_w} matrix"));
                }
            }
            None => match &self.model {
                ZooModel::Fhn(_) if obs_rows != 1 => {
                    p.add("conditioning.L", "the FHN auxiliary needs a single observed coordinate")
                }
                ZooModel::Landmark(_) if c.l.is_some() => {
                    p.add("conditioning.L", "the landmark auxiliary needs full-state conditioning")
                }
                _ => {}
            },
        }

        if self.net.hidden.is_empty() || self.net.hidden.contains(&0) {
            p.add("net.hidden", "need at least one hidden layer, all widths positive");
        }
        if let Some(cap) = self.net.cap {
            if !(cap > 0.0 && cap.is_finite()) {
                p.add("net.cap", "must be positive");
            }
        }
        for (field, msg) in self.train.problems() {
            p.add(format!("train.{field}"), msg);
        }
        let pcn = &self.pcn;
        if !(0.0..=1.0).contains(&pcn.eta) {
            p.add("pcn.eta", "must lie in [0, 1]");
        }
        if pcn.burn_in >= pcn.iters {
            p.add("pcn.burn_in", "must be below pcn.iters");
        }
        if pcn.thin == 0 {
            p.add("pcn.thin", "must be at least 1");
        }
        if pcn.chains == 0 {
            p.add("pcn.chains", "must be at least 1");
        }

        if p.0.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(p.0))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn x0_vec(&self) -> Result<Vec<f64>> {
        self.x0.resolve(&self.model).map_err(BridgeError::InvalidArgument)
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.grid.t_end, self.grid.steps)
    }

    pub fn observation(&self) -> Result<ObservationScheme> {
        let d = self.model.dim();
        let l = match &self.conditioning.l {
            Some(rows) => linalg::from_rows(rows),
            None => DMatrix::identity(d, d),
        };
        let v = self.conditioning.v.resolve(&self.model).map_err(BridgeError::InvalidArgument)?;
        ObservationScheme::with_noise(l, self.conditioning.eps2, linalg::vector(&v), self.grid.t_end)
    }

    pub fn auxiliary_process(&self, obs: &ObservationScheme) -> Result<LinearAuxiliary> {
        match &self.auxiliary {
            Some(a) => LinearAuxiliary::constant(
                linalg::vector(&a.beta),
                linalg::from_rows(&a.b),
                linalg::from_rows(&a.sigma),
            ),
            None => auxiliary_for(&self.model, obs),
        }
    }

    pub fn guided_system(&self) -> Result<GuidedSystem<ZooModel>> {
        let obs = self.observation()?;
        let aux = self.auxiliary_process(&obs)?;
        GuidedSystem::new(self.model.clone(), aux, obs, self.x0_vec()?, self.time_grid()?)
    }

    pub fn architecture(&self) -> MlpArchitecture {
        MlpArchitecture::for_problem(
            self.model.dim(),
            self.model.noise_dim(),
            self.net.hidden.clone(),
            self.net.activation,
        )
    }

    pub fn cap(&self) -> f64 {
        self.net.cap.unwrap_or_else(|| default_cap(self.model.noise_dim()))
    }

    /// Freshly initialised network seeded by the experiment seed.
    pub fn initial_net(&self) -> Result<NeuralDrift> {
        NeuralDrift::init(self.architecture(), self.cap(), self.grid.t_end, self.seed)
    }

    /// Training settings with the experiment seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }
}

/// Parses and validates a config from JSON text.
pub fn parse_config(text: &str) -> std::result::Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> std::result::Result<ExperimentConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

/// Preset configurations shipped with the crate.
pub const BUNDLED: &[(&str, &str)] = &[
    ("brownian", include_str!("../../../configs/brownian.json")),
    ("ou_bridge", include_str!("../../../configs/ou_bridge.json")),
    ("cell_normal", include_str!("../../../configs/cell_normal.json")),
    ("cell_rare", include_str!("../../../configs/cell_rare.json")),
    ("cell_multimodal", include_str!("../../../configs/cell_multimodal.json")),
    ("fhn_normal", include_str!("../../../configs/fhn_normal.json")),
    ("fhn_rare", include_str!("../../../configs/fhn_rare.json")),
    ("landmark", include_str!("../../../configs/landmark.json")),
    ("landmark_50", include_str!("../../../configs/landmark_50.json")),
];

/// Looks up a preset by name; model names select their default preset and
/// dashes may replace underscores.
pub fn bundled_config(name: &str) -> std::result::Result<ExperimentConfig, ConfigError> {
    let key = name.trim_end_matches(".json").replace('-', "_");
    let key = match key.as_str() {
        "ou" => "ou_bridge",
        "cell" => "cell_normal",
        "fhn" => "fhn_normal",
        k => k,
    };
    let text = BUNDLED
        .iter()
        .find(|(n, _)| *n == key)
        .map(|(_, t)| *t)
        .ok_or_else(|| {
            let names: Vec<_> = BUNDLED.iter().map(|(n, _)| *n).collect();
            ConfigError::Io(format!("no bundled config `{name}`; available: {}", names.join(", ")))
        })?;
    parse_config(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_configs_load_and_round_trip() {
        for (name, _) in BUNDLED {
            let cfg = bundled_config(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            let again = parse_config(&cfg.to_json()).unwrap();
            assert_eq!(cfg, again, "{name}");
        }
    }

    #[test]
    fn ou_preset_values() {
        let cfg = bundled_config("ou_bridge").unwrap();
        match cfg.model {
            ZooModel::Ou(m) => assert_eq!((m.gamma, m.mu, m.sigma), (1.7, 1.0, 0.3)),
            other => panic!("unexpected model {other:?}"),
        }
        assert_eq!(cfg.conditioning.v, StateSpec::Values(vec![1.0]));
    }

    #[test]
    fn zero_steps_names_grid_m() {
        let mut cfg = bundled_config("brownian").unwrap();
        cfg.grid.steps = 0;
        let err = parse_config(&cfg.to_json()).unwrap_err();
        assert_eq!(err.fields(), vec!["grid.M"]);
    }

    #[test]
    fn wrong_l_columns_names_conditioning_l() {
        let mut cfg = bundled_config("fhn_normal").unwrap();
        cfg.conditioning.l = Some(vec![vec![1.0, 0.0, 0.0]]);
        let err = parse_config(&cfg.to_json()).unwrap_err();
        assert!(err.fields().contains(&"conditioning.L"), "{err}");
    }

    #[test]
    fn all_errors_are_reported() {
        let mut cfg = bundled_config("cell_normal").unwrap();
        cfg.grid.steps = 0;
        cfg.grid.t_end = -1.0;
        cfg.conditioning.eps2 = 0.0;
        cfg.train.batch_size = 0;
        cfg.pcn.thin = 0;
        let err = parse_config(&cfg.to_json()).unwrap_err();
        assert_eq!(
            err.fields(),
            vec!["grid.T", "grid.M", "conditioning.eps2", "train.batch_size", "pcn.thin"]
        );
    }

    #[test]
    fn landmark_ellipse_resolves() {
        let cfg = bundled_config("landmark").unwrap();
        assert_eq!(cfg.x0_vec().unwrap().len(), 20);
        assert_eq!(bundled_config("landmark_50").unwrap().x0_vec().unwrap().len(), 100);
    }

    #[test]
    fn unknown_fields_and_names() {
        let text = bundled_config("brownian").unwrap().to_json().replace("\"seed\"", "\"sede\"");
        assert!(matches!(parse_config(&text), Err(ConfigError::Parse(_))));
        assert!(bundled_config("nope").is_err());
        assert!(bundled_config("cell-rare").is_ok());
    }
}
