//! Scenario and plant parameter files.
//!
//! Both are TOML documents. A scenario names the plant kind, points at a
//! parameter file (relative paths resolve against the scenario's directory)
//! and fixes the controller, the sampling grid and the outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        source: Box<toml::de::Error>,
    },
    #[error("cannot serialize scenario: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlantKind {
    Boost,
    Buck,
    Lph,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    /// Explicit two-step-delayed stabilizer (boost networks).
    BoostShifted,
    /// Implicit stabilizer solved jointly with the plant.
    Stabilizer,
    /// Output-consensus controller solved jointly with the plant.
    Consensus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub kind: PlantKind,
    /// Parameter file; absent for randomly generated linear plants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameters: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub delta: f64,
    pub horizon: f64,
    /// Step of the continuous-time reference used by `compare`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fine_delta: Option<f64>,
    /// Start of the window in which convergence targets are checked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settle_time: Option<f64>,
    #[serde(default = "default_newton_tolerance")]
    pub newton_tolerance: f64,
}

fn default_newton_tolerance() -> f64 {
    1e-12
}

/// Diagonal gain: one value for every channel or one per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gain {
    Uniform(f64),
    PerChannel(Vec<f64>),
}

impl Gain {
    pub fn expand(&self, m: usize, what: &str) -> Result<Vec<f64>, ConfigError> {
        match self {
            Gain::Uniform(v) => Ok(vec![*v; m]),
            Gain::PerChannel(v) if v.len() == m => Ok(v.clone()),
            Gain::PerChannel(v) => Err(ConfigError::Invalid(format!(
                "{what} has {} entries, expected {m}",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub kind: ControllerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k1: Option<Gain>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k2: Option<Gain>,
    /// Consensus weight `M`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<Gain>,
    /// Consensus damping `K`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Gain>,
    /// Communication graph; defaults to the path through all nodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub communication: Option<Vec<[usize; 2]>>,
    /// Voltage reference of the microgrid scenarios.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_star: Option<Gain>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    /// Boost: initial state as this multiple of the nominal equilibrium.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_scale: Option<f64>,
    /// Explicit initial state, overriding `state_scale`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

/// Seeded batch of random linear port-Hamiltonian plants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSection {
    pub instances: usize,
    pub max_state_dim: usize,
    pub max_input_dim: usize,
    /// Open-loop steps per instance in the passivity audits.
    pub steps: usize,
    /// Sampling period of the open-loop audits.
    pub audit_delta: f64,
    /// Scale of the constant disturbances used by the consensus suite.
    #[serde(default = "default_disturbance")]
    pub disturbance: f64,
}

fn default_disturbance() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub plant: PlantSection,
    pub simulation: SimulationSection,
    pub controller: ControllerSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<RandomSection>,
    /// Directory that relative paths resolve against; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn read(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse<T: for<'de> Deserialize<'de>>(text: &str, path: &Path) -> Result<T, ConfigError> {
    toml::from_str(text).map_err(|source| ConfigError::Parse {
        path: path.to_path_buf(),
        source: Box::new(source),
    })
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut s: Scenario = parse(&read(path)?, path)?;
        s.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        s.validate()?;
        Ok(s)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let s: Scenario = parse(text, Path::new("<string>"))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let sim = &self.simulation;
        if !(sim.delta > 0.0) || !sim.delta.is_finite() {
            return Err(ConfigError::Invalid(format!("delta must be positive, got {}", sim.delta)));
        }
        if !(sim.horizon >= sim.delta) {
            return Err(ConfigError::Invalid(format!(
                "horizon {} is shorter than delta {}",
                sim.horizon, sim.delta
            )));
        }
        if let Some(f) = sim.fine_delta {
            if !(f > 0.0 && f <= sim.delta) {
                return Err(ConfigError::Invalid(format!(
                    "fine_delta must lie in (0, delta], got {f}"
                )));
            }
        }
        if !(sim.newton_tolerance > 0.0) {
            return Err(ConfigError::Invalid("newton_tolerance must be positive".into()));
        }
        match (self.plant.kind, &self.plant.parameters, &self.random) {
            (PlantKind::Lph, _, None) => {
                return Err(ConfigError::Invalid("lph scenarios need a [random] section".into()))
            }
            (PlantKind::Boost | PlantKind::Buck, None, _) => {
                return Err(ConfigError::Invalid("microgrid scenarios need plant.parameters".into()))
            }
            _ => {}
        }
        if let Some(r) = &self.random {
            if r.instances == 0 || r.max_state_dim == 0 || r.max_input_dim == 0 || r.steps < 3 {
                return Err(ConfigError::Invalid(
                    "random batch needs instances, dimensions ≥ 1 and at least 3 steps".into(),
                ));
            }
            if !(r.audit_delta > 0.0) {
                return Err(ConfigError::Invalid("audit_delta must be positive".into()));
            }
        }
        let kind_ok = matches!(
            (self.plant.kind, self.controller.kind),
            (PlantKind::Boost, ControllerKind::BoostShifted)
                | (PlantKind::Buck, ControllerKind::Consensus)
                | (PlantKind::Lph, ControllerKind::Stabilizer | ControllerKind::Consensus)
        );
        if !kind_ok {
            return Err(ConfigError::Invalid(format!(
                "controller {:?} is not available for plant {:?}",
                self.controller.kind, self.plant.kind
            )));
        }
        Ok(())
    }

    /// Number of samples `N` with `N δ` closest to the horizon.
    pub fn steps(&self) -> usize {
        (self.simulation.horizon / self.simulation.delta).round() as usize
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn parameters_path(&self) -> Option<PathBuf> {
        self.plant.parameters.as_deref().map(|p| self.resolve(p))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinesSection {
    /// Line endpoints; positive current flows from the first to the second.
    pub edges: Vec<[usize; 2]>,
    pub resistance: Vec<f64>,
    pub inductance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub time: f64,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoostNodes {
    pub source_inductance: Vec<f64>,
    pub capacitance: Vec<f64>,
    pub source_voltage: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoostLoads {
    pub conductance: Vec<f64>,
    pub current: Vec<f64>,
}

/// Boost parameter file; the schedule scales the load currents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoostParams {
    pub nodes: BoostNodes,
    pub lines: LinesSection,
    pub loads: BoostLoads,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuckNodes {
    pub resistance: Vec<f64>,
    pub inductance: Vec<f64>,
    pub capacitance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuckLoads {
    pub conductance: Vec<f64>,
    pub current: Vec<f64>,
    pub power: Vec<f64>,
}

/// Buck parameter file; the schedule scales the load powers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuckParams {
    pub nodes: BuckNodes,
    pub lines: LinesSection,
    pub loads: BuckLoads,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleSection>,
}

pub fn load_boost_params(path: &Path) -> Result<BoostParams, ConfigError> {
    parse(&read(path)?, path)
}

pub fn load_buck_params(path: &Path) -> Result<BuckParams, ConfigError> {
    parse(&read(path)?, path)
}
