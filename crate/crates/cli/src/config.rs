//! Deck format: a TOML document deserialized into [`SimulationConfig`].

use std::fmt;

use serde::{Deserialize, Serialize};
use vanroos::device::{validate_device, Device, DeviceSpec, DopingBox};
use vanroos::recombination::BulkRecombination;
use vanroos::statistics::{StatisticsModel, StatisticsPair};
use vanroos::transient::{InitialCondition, Models, SchemeKind, Simulator, TimeStepperConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    /// Seed of the property suites; runs themselves are deterministic.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scheme: SchemeKind,
    pub mesh: MeshConfig,
    pub device: DeviceSpec,
    #[serde(default = "default_statistics")]
    pub statistics: StatisticsPair,
    #[serde(default)]
    pub recombination: RecombinationConfig,
    #[serde(default)]
    pub stepper: TimeStepperConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_statistics() -> StatisticsPair {
    StatisticsPair::uniform(StatisticsModel::boltzmann())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    /// Cells per axis.
    pub cells: Vec<usize>,
}

/// Bulk models; surface and interface models live on the device boundary
/// and interfaces.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecombinationConfig {
    #[serde(default)]
    pub bulk: Vec<BulkRecombination>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialConfig {
    #[default]
    Equilibrium,
    QuasiFermi {
        electrons: Profile,
        holes: Profile,
    },
    Densities {
        electrons: Profile,
        holes: Profile,
    },
}

/// Cell field given as a constant, one value per cell, or a sum of boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Profile {
    Constant(f64),
    Cells(Vec<f64>),
    Boxes(Vec<DopingBox>),
}

impl Profile {
    pub fn sample(&self, device: &Device) -> Vec<f64> {
        let cells = &device.mesh.cells;
        match self {
            Profile::Constant(v) => vec![*v; cells.len()],
            Profile::Cells(v) => v.clone(),
            Profile::Boxes(boxes) => cells
                .iter()
                .map(|c| {
                    boxes
                        .iter()
                        .filter(|b| b.bounds.iter().zip(&c.center).all(|(r, &x)| x >= r[0] && x <= r[1]))
                        .map(|b| b.value)
                        .sum()
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Per-step table; `None` disables it.
    #[serde(default = "default_timeseries", skip_serializing_if = "Option::is_none")]
    pub timeseries: Option<String>,
    /// Field snapshot of the final state.
    #[serde(default = "default_fields", skip_serializing_if = "Option::is_none")]
    pub fields: Option<String>,
    /// Extra snapshots `fields_<step>.csv` every that many accepted steps
    /// (0: none).
    #[serde(default)]
    pub snapshot_every: usize,
    /// Contact bias against contact current per step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iv: Option<String>,
    /// Points whose cell values are added to the time series.
    #[serde(default)]
    pub probes: Vec<Vec<f64>>,
    #[serde(default = "default_blowup")]
    pub blowup_report: String,
    #[serde(default = "default_dump")]
    pub config_dump: String,
}

fn default_timeseries() -> Option<String> {
    Some("timeseries.csv".into())
}

fn default_fields() -> Option<String> {
    Some("fields.csv".into())
}

fn default_blowup() -> String {
    "blowup.json".into()
}

fn default_dump() -> String {
    "config.toml".into()
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            timeseries: default_timeseries(),
            fields: default_fields(),
            snapshot_every: 0,
            iv: None,
            probes: Vec::new(),
            blowup_report: default_blowup(),
            config_dump: default_dump(),
        }
    }
}

/// One problem found in a deck.
#[derive(Debug, Clone, PartialEq)]
pub struct Issue {
    /// 1-based line and column, when the problem has a location in the text.
    pub location: Option<(usize, usize)>,
    /// Dotted key path, when known.
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some((line, col)) = self.location {
            write!(f, "line {line}, column {col}: ")?;
        }
        if let Some(field) = &self.field {
            write!(f, "{field}: ")?;
        }
        write!(f, "{}", self.message)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("syntax error: {0}")]
    Syntax(Issue),
    #[error("schema violation: {0}")]
    Schema(Issue),
    #[error("invalid configuration: {}", join(.0))]
    Invalid(Vec<Issue>),
}

fn join(issues: &[Issue]) -> String {
    issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; ")
}

impl ConfigError {
    pub fn issues(&self) -> Vec<&Issue> {
        match self {
            ConfigError::Syntax(i) | ConfigError::Schema(i) => vec![i],
            ConfigError::Invalid(v) => v.iter().collect(),
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

/// Appends the closest expected name to serde's unknown-field message.
fn with_suggestion(message: &str) -> String {
    let Some(rest) = message.strip_prefix("unknown field `") else {
        return message.to_string();
    };
    let Some((key, tail)) = rest.split_once('`') else {
        return message.to_string();
    };
    let expected: Vec<&str> = tail.split('`').skip(1).step_by(2).collect();
    let best = expected
        .iter()
        .map(|cand| (strsim::levenshtein(key, cand), *cand))
        .min();
    match best {
        Some((d, cand)) if d <= key.len().max(cand.len()) / 2 + 1 => {
            format!("unknown key `{key}`; did you mean `{cand}`? ({message})")
        }
        _ => format!("unknown key `{key}` ({message})"),
    }
}

/// Parses and validates a deck.
pub fn parse_config(text: &str) -> Result<SimulationConfig, ConfigError> {
    toml::from_str::<toml::Table>(text).map_err(|e| {
        ConfigError::Syntax(Issue {
            location: e.span().map(|s| line_col(text, s.start)),
            field: None,
            message: e.message().to_string(),
        })
    })?;
    let config: SimulationConfig = toml::from_str(text).map_err(|e| {
        ConfigError::Schema(Issue {
            location: e.span().map(|s| line_col(text, s.start)),
            field: None,
            message: with_suggestion(e.message()),
        })
    })?;
    let issues = validate(&config);
    if issues.is_empty() {
        Ok(config)
    } else {
        Err(ConfigError::Invalid(issues))
    }
}

fn issue(field: &str, message: impl Into<String>) -> Issue {
    Issue {
        location: None,
        field: Some(field.into()),
        message: message.into(),
    }
}

/// Semantic checks beyond the schema.
pub fn validate(config: &SimulationConfig) -> Vec<Issue> {
    let mut issues = Vec::new();
    for v in validate_device(&config.device).violations {
        issues.push(issue("device", v.message));
    }
    let cells = &config.mesh.cells;
    if cells.len() != config.device.dimension || cells.contains(&0) {
        issues.push(issue(
            "mesh.cells",
            format!(
                "need one positive count per axis of a {}D device",
                config.device.dimension
            ),
        ));
    }
    if let Err(e) = config.stepper.check() {
        issues.push(issue("stepper", e.to_string()));
    }
    for (i, m) in config.recombination.bulk.iter().enumerate() {
        if let Some(msg) = m.check() {
            issues.push(issue(&format!("recombination.bulk.{i}"), msg));
        }
    }
    for (name, m) in [
        ("electrons", &config.statistics.electrons),
        ("holes", &config.statistics.holes),
    ] {
        if !(m.inversion_rtol > 0.0 && m.quadrature.relative_tolerance > 0.0) {
            issues.push(issue(&format!("statistics.{name}"), "tolerances must be positive"));
        }
    }
    let n: usize = cells.iter().product();
    if let InitialConfig::QuasiFermi { electrons, holes } | InitialConfig::Densities { electrons, holes } =
        &config.initial
    {
        for (name, p) in [("electrons", electrons), ("holes", holes)] {
            if let Profile::Cells(v) = p {
                if v.len() != n {
                    issues.push(issue(
                        &format!("initial.{name}"),
                        format!("has {} values for {n} cells", v.len()),
                    ));
                }
            }
        }
        if let InitialConfig::Densities { electrons, holes } = &config.initial {
            let positive = |p: &Profile| match p {
                Profile::Constant(v) => *v > 0.0,
                Profile::Cells(v) => v.iter().all(|x| *x > 0.0),
                Profile::Boxes(_) => true,
            };
            if !positive(electrons) || !positive(holes) {
                issues.push(issue("initial", "densities must be positive"));
            }
        }
    }
    let out = &config.output;
    for (i, p) in out.probes.iter().enumerate() {
        let inside = p.len() == config.device.dimension
            && p.iter()
                .zip(&config.device.extent)
                .all(|(&x, &l)| (0.0..=l).contains(&x));
        if !inside {
            issues.push(issue(&format!("output.probes.{i}"), "probe lies outside the device"));
        }
    }
    issues
}

/// Canonical TOML form; parsing it yields an equal config.
pub fn normalized(config: &SimulationConfig) -> String {
    toml::to_string(config).expect("configs serialize")
}

/// Device, models and stepper of a validated config.
pub fn build_simulator(config: &SimulationConfig) -> vanroos::Result<Simulator> {
    let device = Device::new(config.device.clone(), &config.mesh.cells)?;
    let models = Models {
        stats: config.statistics,
        bulk: config.recombination.bulk.clone(),
        scheme: config.scheme,
    };
    Simulator::new(device, models, config.stepper.clone())
}

pub fn initial_condition(config: &SimulationConfig, device: &Device) -> InitialCondition {
    match &config.initial {
        InitialConfig::Equilibrium => InitialCondition::Equilibrium,
        InitialConfig::QuasiFermi { electrons, holes } => {
            InitialCondition::QuasiFermi([electrons.sample(device), holes.sample(device)])
        }
        InitialConfig::Densities { electrons, holes } => {
            InitialCondition::Densities([electrons.sample(device), holes.sample(device)])
        }
    }
}
