//! Configuration, experiment drivers, Monte Carlo sweeps, bound verification
//! and CSV artifacts.
//!
//! # Configuration
//!
//! A TOML document with optional top-level keys and flat sections. Unknown
//! keys are rejected. Every key can be overridden from the environment as
//! `DOMD_<SECTION>__<KEY>` (for example `DOMD_NOISE__SIGMA_V2=0.25`) or
//! `DOMD_<KEY>` for top-level keys.
//!
//! ```toml
//! scenario = "tracking"       # tracking | synthetic_bounds | custom
//! seed = 1
//! runs = 50
//! horizon = 1000
//! output_dir = "out"          # optional, not part of the config hash
//!
//! [network]
//! kind = "grid"               # grid | complete | edge_list
//! rows = 5
//! cols = 5
//! # n = 25                    # complete graphs
//! # path = "graph.txt"        # edge lists
//!
//! [geometry]
//! kind = "euclidean"          # euclidean | kl
//! domain = "box"              # box | free (euclidean only)
//! bound = 10000.0             # box [-bound, bound]^d
//! floor = 0.01                # kl simplex floor
//! # dim = 2                   # synthetic scenario
//!
//! [schedule]
//! kind = "constant"           # constant | inv_sqrt | corollary_optimal
//! eta0 = 0.5
//! # c_t = 3.0                 # corollary; computed from the path when absent
//!
//! [dynamics]
//! kind = "ncv"                # ncv | identity | scaled_identity
//! eps = 0.1
//! scale = 0.9
//! initial_state = [0.0, 1.0, 0.0, 1.0]
//!
//! [noise]
//! kind = "gaussian_ncv"       # gaussian_ncv | zero | constant_drift | custom
//! sigma_v2 = 0.5
//! fixed_path = false
//! # drift = [0.01, 0.0]       # constant_drift
//! # path_file = "path.csv"    # custom: comparator states t, x1..xd, v1..vd
//!
//! [observation]
//! noise_half_width = 1.0
//!
//! [gradient]
//! mode = "stochastic"         # exact | stochastic
//! convention = "literal"      # literal | true
//! noise = 0.0                 # synthetic gradient noise half-width
//!
//! [synthetic]
//! loss = "quadratic"          # quadratic | linear
//! jitter = 0.05
//! spread = 1.0
//! scale = 1.0
//! ```
//!
//! Relative file paths are resolved against the directory of the config
//! file. Defaults that depend on the scenario (noise kind, dynamics,
//! gradient mode, dimension) are filled in before hashing, so the recorded
//! hash always describes the resolved configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::csvio::{fmt_float, Csv};
use crate::dynamics::{
    generate_path, ncv_dynamics, path_variation, DynamicsError, LinearDynamics, MinimizerPath, NoiseModel,
};
use crate::engine::{run, EngineError, GradientMode, RunTrace, Simulation, StepSchedule};
use crate::geometry::{Domain, GeometryError, MirrorGeometry};
use crate::metrics::{
    local_regret, network_disagreement, path_norm, regret_report, theorem1_bound, BoundInputs, BoundReport,
    MetricsError, RegretReport,
};
use crate::network::{
    build_complete_graph, build_grid_graph, metropolis_weights, second_singular_value, Graph, NetworkError,
    WeightMatrix,
};
use crate::objectives::{
    lipschitz_bound, stochastic_gradient_bound, synthetic_suite, GradientConvention, LossEnsemble, ObjectiveError,
    ObservationModel, SuiteSpec, SyntheticKind,
};
use crate::{seed, Matrix, Vector};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid value for `{key}`: {msg}")]
    Range { key: String, msg: String },
    #[error("inconsistent config: {0}")]
    Config(String),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl HarnessError {
    /// Errors caused by the configuration rather than by a computation.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Self::Parse(_) | Self::Range { .. } | Self::Config(_) | Self::Io { .. })
    }
}

fn range(key: &str, msg: impl Into<String>) -> HarnessError {
    HarnessError::Range { key: key.to_string(), msg: msg.into() }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io { path: path.display().to_string(), msg: e.to_string() }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Tracking,
    SyntheticBounds,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    Grid,
    Complete,
    EdgeList,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    Euclidean,
    Kl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Box,
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKindConfig {
    Constant,
    InvSqrt,
    CorollaryOptimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsKind {
    Ncv,
    Identity,
    ScaledIdentity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    GaussianNcv,
    Zero,
    ConstantDrift,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeConfig {
    Exact,
    Stochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConventionConfig {
    Literal,
    True,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossConfig {
    Quadratic,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub kind: NetworkKind,
    pub rows: usize,
    pub cols: usize,
    pub n: Option<usize>,
    pub path: Option<String>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { kind: NetworkKind::Grid, rows: 5, cols: 5, n: None, path: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub kind: GeometryKind,
    pub domain: DomainKind,
    pub bound: f64,
    pub floor: f64,
    pub dim: Option<usize>,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self { kind: GeometryKind::Euclidean, domain: DomainKind::Box, bound: 10000.0, floor: 0.01, dim: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub kind: ScheduleKindConfig,
    pub eta0: f64,
    pub c_t: Option<f64>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { kind: ScheduleKindConfig::Constant, eta0: 0.5, c_t: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsConfig {
    pub kind: Option<DynamicsKind>,
    pub eps: f64,
    pub scale: f64,
    pub initial_state: Option<Vec<f64>>,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self { kind: None, eps: 0.1, scale: 0.9, initial_state: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub kind: Option<NoiseKind>,
    pub sigma_v2: f64,
    pub fixed_path: bool,
    pub drift: Option<Vec<f64>>,
    pub path_file: Option<String>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { kind: None, sigma_v2: 0.5, fixed_path: false, drift: None, path_file: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservationConfig {
    pub noise_half_width: f64,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self { noise_half_width: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradientConfig {
    pub mode: Option<ModeConfig>,
    pub convention: ConventionConfig,
    pub noise: f64,
}

impl Default for GradientConfig {
    fn default() -> Self {
        Self { mode: None, convention: ConventionConfig::Literal, noise: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub loss: LossConfig,
    pub jitter: f64,
    pub spread: f64,
    pub scale: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { loss: LossConfig::Quadratic, jitter: 0.05, spread: 1.0, scale: 1.0 }
    }
}

/// A fully specified experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub seed: u64,
    pub runs: usize,
    pub horizon: usize,
    #[serde(skip_serializing)]
    pub output_dir: Option<String>,
    pub network: NetworkConfig,
    pub geometry: GeometryConfig,
    pub schedule: ScheduleConfig,
    pub dynamics: DynamicsConfig,
    pub noise: NoiseConfig,
    pub observation: ObservationConfig,
    pub gradient: GradientConfig,
    pub synthetic: SyntheticConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Tracking,
            seed: 1,
            runs: 50,
            horizon: 1000,
            output_dir: None,
            network: NetworkConfig::default(),
            geometry: GeometryConfig::default(),
            schedule: ScheduleConfig::default(),
            dynamics: DynamicsConfig::default(),
            noise: NoiseConfig::default(),
            observation: ObservationConfig::default(),
            gradient: GradientConfig::default(),
            synthetic: SyntheticConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Fills scenario-dependent defaults.
    fn resolve(&mut self) {
        let tracking = self.scenario == Scenario::Tracking;
        self.dynamics.kind.get_or_insert(if tracking { DynamicsKind::Ncv } else { DynamicsKind::Identity });
        self.noise.kind.get_or_insert(match self.scenario {
            Scenario::Tracking => NoiseKind::GaussianNcv,
            Scenario::SyntheticBounds => NoiseKind::Zero,
            Scenario::Custom => NoiseKind::Custom,
        });
        self.gradient.mode.get_or_insert(if tracking { ModeConfig::Stochastic } else { ModeConfig::Exact });
        if tracking {
            self.geometry.dim.get_or_insert(4);
            self.dynamics.initial_state.get_or_insert_with(|| vec![0.0, 1.0, 0.0, 1.0]);
        } else if self.scenario == Scenario::SyntheticBounds {
            self.geometry.dim.get_or_insert(2);
        }
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if self.seed > i64::MAX as u64 {
            return Err(range("seed", "must fit in a signed 64-bit integer"));
        }
        if self.runs == 0 {
            return Err(range("runs", "must be >= 1"));
        }
        if self.horizon == 0 {
            return Err(range("horizon", "must be >= 1"));
        }
        let n = &self.network;
        if n.rows == 0 || n.cols == 0 {
            return Err(range("network.rows", "grid sides must be >= 1"));
        }
        if n.kind == NetworkKind::Complete && n.n.unwrap_or(0) == 0 {
            return Err(range("network.n", "complete graphs need n >= 1"));
        }
        if n.kind == NetworkKind::EdgeList && n.path.is_none() {
            return Err(range("network.path", "edge_list graphs need a path"));
        }
        let g = &self.geometry;
        if !(g.bound > 0.0 && g.bound.is_finite()) {
            return Err(range("geometry.bound", format!("must be positive, got {}", g.bound)));
        }
        if g.dim == Some(0) {
            return Err(range("geometry.dim", "must be >= 1"));
        }
        if g.kind == GeometryKind::Kl {
            let d = g.dim.unwrap_or(2) as f64;
            if !(g.floor > 0.0 && g.floor < 1.0 / d) {
                return Err(range("geometry.floor", format!("must lie in (0, 1/d), got {}", g.floor)));
            }
            if g.domain == DomainKind::Free {
                return Err(range("geometry.domain", "kl geometry lives on the simplex"));
            }
        }
        if !(self.schedule.eta0 > 0.0 && self.schedule.eta0.is_finite()) {
            return Err(range("schedule.eta0", format!("must be positive, got {}", self.schedule.eta0)));
        }
        if let Some(c) = self.schedule.c_t {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(range("schedule.c_t", format!("must be >= 0, got {c}")));
            }
        }
        if !(self.dynamics.eps > 0.0 && self.dynamics.eps.is_finite()) {
            return Err(range("dynamics.eps", format!("must be positive, got {}", self.dynamics.eps)));
        }
        if !(self.dynamics.scale >= 0.0 && self.dynamics.scale.is_finite()) {
            return Err(range("dynamics.scale", format!("must be >= 0, got {}", self.dynamics.scale)));
        }
        if !(self.noise.sigma_v2 >= 0.0 && self.noise.sigma_v2.is_finite()) {
            return Err(range("noise.sigma_v2", format!("must be >= 0, got {}", self.noise.sigma_v2)));
        }
        if self.noise.kind == Some(NoiseKind::ConstantDrift) && self.noise.drift.is_none() {
            return Err(range("noise.drift", "constant_drift needs a drift vector"));
        }
        if self.noise.kind == Some(NoiseKind::Custom) && self.noise.path_file.is_none() {
            return Err(range("noise.path_file", "custom noise needs a path file"));
        }
        let h = self.observation.noise_half_width;
        if !(h >= 0.0 && h.is_finite()) {
            return Err(range("observation.noise_half_width", format!("must be >= 0, got {h}")));
        }
        if !(self.gradient.noise >= 0.0 && self.gradient.noise.is_finite()) {
            return Err(range("gradient.noise", format!("must be >= 0, got {}", self.gradient.noise)));
        }
        let s = &self.synthetic;
        if !(s.jitter >= 0.0 && s.jitter.is_finite()) {
            return Err(range("synthetic.jitter", format!("must be >= 0, got {}", s.jitter)));
        }
        if !(0.0..=1.0).contains(&s.spread) {
            return Err(range("synthetic.spread", format!("must lie in [0, 1], got {}", s.spread)));
        }
        if !(0.0..=1.0).contains(&s.scale) {
            return Err(range("synthetic.scale", format!("must lie in [0, 1], got {}", s.scale)));
        }
        if self.scenario == Scenario::Tracking {
            if self.geometry.kind != GeometryKind::Euclidean {
                return Err(range("geometry.kind", "tracking uses the euclidean geometry"));
            }
            if self.geometry.dim != Some(4) {
                return Err(range("geometry.dim", "tracking state is 4-dimensional"));
            }
        }
        if self.scenario == Scenario::Custom && self.noise.kind != Some(NoiseKind::Custom) {
            return Err(range("noise.kind", "the custom scenario reads its path from noise.path_file"));
        }
        Ok(())
    }

    /// Canonical TOML serialization of the resolved config (without
    /// `output_dir`).
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of [`ExperimentConfig::canonical`], hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    /// Sets a numeric key given as `section.key` (or a top-level key).
    pub fn set_numeric(&mut self, key: &str, value: f64) -> Result<(), HarnessError> {
        let output_dir = self.output_dir.clone();
        let mut table = toml::Table::try_from(&*self).map_err(|e| HarnessError::Parse(e.to_string()))?;
        let slot = lookup_mut(&mut table, key).ok_or_else(|| range(key, "no such numeric key"))?;
        *slot = match slot {
            toml::Value::Integer(_) if value.fract() == 0.0 && value.abs() < 9e15 => toml::Value::Integer(value as i64),
            toml::Value::Float(_) => toml::Value::Float(value),
            _ => return Err(range(key, "not a numeric key")),
        };
        let mut next: Self = toml::Value::Table(table).try_into().map_err(|e| range(key, format!("{e}")))?;
        next.output_dir = output_dir;
        next.validate()?;
        *self = next;
        Ok(())
    }
}

fn lookup_mut<'a>(table: &'a mut toml::Table, key: &str) -> Option<&'a mut toml::Value> {
    match key.split_once('.') {
        Some((section, rest)) => match table.get_mut(section)? {
            toml::Value::Table(t) => t.get_mut(rest),
            _ => None,
        },
        None => table.get_mut(key),
    }
}

/// Parses a config with overrides from the process environment.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, HarnessError> {
    parse_config_with_env(text, std::env::vars())
}

/// Parses a config applying `DOMD_*` overrides from `env`.
pub fn parse_config_with_env(
    text: &str,
    env: impl IntoIterator<Item = (String, String)>,
) -> Result<ExperimentConfig, HarnessError> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))?;
    let overrides: BTreeMap<String, String> = env.into_iter().filter(|(k, _)| k.starts_with("DOMD_")).collect();
    for (name, raw) in overrides {
        let key = name["DOMD_".len()..].to_lowercase();
        let typed = toml::from_str::<toml::Table>(&format!("v = {raw}")).ok().and_then(|mut t| t.remove("v"));
        match typed {
            Some(value) => {
                let mut attempt = table.clone();
                set_override(&mut attempt, &key, value)?;
                if toml::Value::Table(attempt.clone()).try_into::<ExperimentConfig>().is_ok() {
                    table = attempt;
                } else {
                    set_override(&mut table, &key, toml::Value::String(raw))?;
                }
            }
            None => set_override(&mut table, &key, toml::Value::String(raw))?,
        }
    }
    let mut config: ExperimentConfig =
        toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| HarnessError::Parse(e.to_string()))?;
    config.resolve();
    config.validate()?;
    Ok(config)
}

fn set_override(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), HarnessError> {
    match key.split_once("__") {
        Some((section, field)) => {
            match table.entry(section.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new())) {
                toml::Value::Table(t) => {
                    t.insert(field.to_string(), value);
                }
                _ => return Err(range(section, "override targets a non-table key")),
            }
        }
        None => {
            table.insert(key.to_string(), value);
        }
    }
    Ok(())
}

/// Reads and parses a config file, resolving relative paths inside it
/// against the file's directory.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut config = parse_config(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &mut Option<String>| {
        if let Some(s) = p {
            if Path::new(s).is_relative() {
                *s = base.join(&*s).display().to_string();
            }
        }
    };
    resolve(&mut config.network.path);
    resolve(&mut config.noise.path_file);
    Ok(config)
}

// ---------------------------------------------------------------------------
// Problem construction
// ---------------------------------------------------------------------------

/// Every ingredient of one replicate.
#[derive(Debug, Clone)]
pub struct Problem {
    pub weights: WeightMatrix,
    pub sigma2: f64,
    pub geometry: MirrorGeometry,
    pub dynamics: LinearDynamics,
    pub losses: LossEnsemble,
    pub path: MinimizerPath,
    pub schedule: StepSchedule,
    pub mode: GradientMode,
    pub seed: u64,
}

fn build_graph(config: &ExperimentConfig) -> Result<Graph, HarnessError> {
    let n = &config.network;
    Ok(match n.kind {
        NetworkKind::Grid => build_grid_graph(n.rows, n.cols)?,
        NetworkKind::Complete => build_complete_graph(n.n.unwrap_or(1))?,
        NetworkKind::EdgeList => {
            let path = PathBuf::from(n.path.as_deref().unwrap_or_default());
            let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            Graph::from_edge_list(&text)?
        }
    })
}

fn build_geometry(config: &ExperimentConfig, dim: usize) -> Result<MirrorGeometry, HarnessError> {
    let g = &config.geometry;
    Ok(match (g.kind, g.domain) {
        (GeometryKind::Kl, _) => MirrorGeometry::kl(dim, g.floor)?,
        (GeometryKind::Euclidean, DomainKind::Box) => MirrorGeometry::euclidean(Domain::symmetric_box(dim, g.bound)?)?,
        (GeometryKind::Euclidean, DomainKind::Free) => MirrorGeometry::euclidean(Domain::free(dim)?)?,
    })
}

fn build_dynamics(config: &ExperimentConfig, dim: usize) -> Result<LinearDynamics, HarnessError> {
    let d = &config.dynamics;
    Ok(match d.kind.unwrap_or(DynamicsKind::Identity) {
        DynamicsKind::Ncv => {
            if dim != 4 {
                return Err(range("dynamics.kind", "ncv dynamics are 4-dimensional"));
            }
            ncv_dynamics(d.eps)?
        }
        DynamicsKind::Identity => LinearDynamics::identity(dim),
        DynamicsKind::ScaledIdentity => LinearDynamics::scaled_identity(dim, d.scale)?,
    })
}

fn read_path(config: &ExperimentConfig, dyn_: &LinearDynamics) -> Result<MinimizerPath, HarnessError> {
    let path = PathBuf::from(config.noise.path_file.as_deref().unwrap_or_default());
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let loaded = MinimizerPath::from_csv(&text)?;
    if loaded.horizon() < config.horizon {
        return Err(range("horizon", format!("path file covers only {} steps", loaded.horizon())));
    }
    Ok(MinimizerPath::from_states(loaded.states[..=config.horizon].to_vec(), dyn_)?)
}

fn vector_key(key: &str, v: &Option<Vec<f64>>, dim: usize) -> Result<Option<Vector>, HarnessError> {
    match v {
        Some(xs) if xs.len() != dim => Err(range(key, format!("expected {dim} entries, got {}", xs.len()))),
        Some(xs) => Ok(Some(Vector::from_row_slice(xs))),
        None => Ok(None),
    }
}

fn build_schedule(config: &ExperimentConfig, sigma2: f64, path: &MinimizerPath, dyn_: &LinearDynamics, geom: &MirrorGeometry) -> Result<StepSchedule, HarnessError> {
    let s = &config.schedule;
    Ok(match s.kind {
        ScheduleKindConfig::Constant => StepSchedule::constant(s.eta0, config.horizon)?,
        ScheduleKindConfig::InvSqrt => StepSchedule::inv_sqrt(s.eta0, config.horizon)?,
        ScheduleKindConfig::CorollaryOptimal => {
            let c_t = match s.c_t {
                Some(c) => c,
                None => {
                    let truncated = MinimizerPath {
                        states: path.states[..=config.horizon].to_vec(),
                        noise: path.noise[..config.horizon].to_vec(),
                    };
                    path_variation(&truncated, dyn_, path_norm(geom))?
                }
            };
            StepSchedule::corollary_optimal(c_t, sigma2, s.eta0, config.horizon)?
        }
    })
}

/// Builds replicate `replicate` of `config`. The replicate seed drives the
/// oracle streams and, unless `noise.fixed_path` is set, the comparator path
/// and synthetic losses; a fixed path is drawn from the master seed.
pub fn build_problem(config: &ExperimentConfig, replicate: u64) -> Result<Problem, HarnessError> {
    let rep_seed = seed::derive(config.seed, replicate);
    let path_seed = if config.noise.fixed_path { config.seed } else { rep_seed };
    let weights = metropolis_weights(&build_graph(config)?)?;
    let sigma2 = second_singular_value(&weights)?.sigma2;
    let n = weights.n();
    let mode = match config.gradient.mode.unwrap_or(ModeConfig::Exact) {
        ModeConfig::Exact => GradientMode::Exact,
        ModeConfig::Stochastic => GradientMode::Stochastic,
    };

    let (geometry, dynamics, losses, path) = match config.scenario {
        Scenario::Tracking => {
            let geometry = build_geometry(config, 4)?;
            let dynamics = build_dynamics(config, 4)?;
            let x0 = vector_key("dynamics.initial_state", &config.dynamics.initial_state, 4)?
                .unwrap_or_else(|| Vector::zeros(4));
            let path = match config.noise.kind.unwrap_or(NoiseKind::GaussianNcv) {
                NoiseKind::Custom => read_path(config, &dynamics)?,
                kind => {
                    let noise = noise_model(config, kind, 4, path_seed)?;
                    generate_path(&dynamics, &noise, &x0, config.horizon)?
                }
            };
            let observation = ObservationModel::four_groups(n, config.observation.noise_half_width)?;
            let convention = match config.gradient.convention {
                ConventionConfig::Literal => GradientConvention::Literal,
                ConventionConfig::True => GradientConvention::True,
            };
            let losses = LossEnsemble::tracking(observation, &path, convention)?;
            (geometry, dynamics, losses, path)
        }
        Scenario::SyntheticBounds => {
            let dim = config.geometry.dim.unwrap_or(2);
            let geometry = build_geometry(config, dim)?;
            let dynamics = build_dynamics(config, dim)?;
            let drift = match config.noise.kind {
                Some(NoiseKind::ConstantDrift) => vector_key("noise.drift", &config.noise.drift, dim)?,
                Some(NoiseKind::Zero) | None => None,
                Some(_) => return Err(range("noise.kind", "synthetic suites support zero or constant_drift noise")),
            };
            let kind = match config.synthetic.loss {
                LossConfig::Quadratic => SyntheticKind::Quadratic,
                LossConfig::Linear => SyntheticKind::Linear,
            };
            let spec = SuiteSpec {
                jitter: config.synthetic.jitter,
                drift,
                start: vector_key("dynamics.initial_state", &config.dynamics.initial_state, dim)?,
                spread: config.synthetic.spread,
                scale: config.synthetic.scale,
                ..SuiteSpec::new(kind, n, config.horizon, dynamics.clone(), path_seed)
            };
            let (losses, path) = synthetic_suite(&spec, &geometry)?;
            (geometry, dynamics, losses.with_gradient_noise(config.gradient.noise), path)
        }
        Scenario::Custom => {
            let dim = {
                let p = PathBuf::from(config.noise.path_file.as_deref().unwrap_or_default());
                let text = fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
                MinimizerPath::from_csv(&text)?.dim()
            };
            let geometry = build_geometry(config, dim)?;
            let dynamics = build_dynamics(config, dim)?;
            let path = read_path(config, &dynamics)?;
            let centers = path.states.iter().map(|x| vec![x.clone(); n]).collect();
            let losses = LossEnsemble::quadratic(centers, &geometry)?.with_gradient_noise(config.gradient.noise);
            (geometry, dynamics, losses, path)
        }
    };
    let schedule = build_schedule(config, sigma2, &path, &dynamics, &geometry)?;
    Ok(Problem { weights, sigma2, geometry, dynamics, losses, path, schedule, mode, seed: rep_seed })
}

fn noise_model(config: &ExperimentConfig, kind: NoiseKind, dim: usize, path_seed: u64) -> Result<NoiseModel, HarnessError> {
    Ok(match kind {
        NoiseKind::GaussianNcv => {
            NoiseModel::GaussianNcv { eps: config.dynamics.eps, sigma_v2: config.noise.sigma_v2, seed: path_seed }
        }
        NoiseKind::Zero => NoiseModel::Zero,
        NoiseKind::ConstantDrift => NoiseModel::ConstantDrift(
            vector_key("noise.drift", &config.noise.drift, dim)?.expect("validated"),
        ),
        NoiseKind::Custom => unreachable!("custom paths are read from file"),
    })
}

// ---------------------------------------------------------------------------
// Single runs
// ---------------------------------------------------------------------------

/// Outputs of one replicate.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub problem: Problem,
    pub trace: RunTrace,
    pub regret: RegretReport,
    pub disagreement: Vec<f64>,
    pub bounds: Option<BoundReport>,
    /// Factor between the loss the stochastic oracle is unbiased for and the
    /// reported loss (0.5 for literal tracking directions, else 1).
    pub oracle_scale: f64,
    /// `(file name, contents)` of every artifact.
    pub files: Vec<(String, String)>,
}

impl RunOutput {
    /// Bound on the reported dynamic regret: the matching theorem for the
    /// oracle's loss, divided by the oracle scale.
    pub fn regret_bound(&self) -> Option<f64> {
        let b = self.bounds.as_ref()?;
        let total = match self.problem.mode {
            GradientMode::Exact => b.theorem1_total,
            GradientMode::Stochastic => b.theorem2_total?,
        };
        Some(total / self.oracle_scale)
    }
}

/// Inputs of every bound for a problem and run. `l_scale` multiplies the
/// declared `L` and `G` (1 for honest bounds).
pub fn bound_inputs(problem: &Problem, trace: &RunTrace, oracle_scale: f64, l_scale: f64) -> Result<Option<BoundInputs>, HarnessError> {
    let geom = &problem.geometry;
    if !geom.domain().is_bounded() {
        return Ok(None);
    }
    let l = lipschitz_bound(&problem.losses, geom)?;
    let g = stochastic_gradient_bound(&problem.losses, geom)?;
    Ok(Some(BoundInputs {
        constants: geom.constants()?,
        lipschitz: l * oracle_scale * l_scale,
        g: Some(g * l_scale),
        sigma2: problem.sigma2,
        etas: trace.etas.clone(),
        noise_norms: problem.path.noise[..trace.horizon()].iter().map(|v| geom.norm(v)).collect(),
        n: trace.n(),
    }))
}

fn oracle_scale(problem: &Problem) -> f64 {
    match problem.mode {
        GradientMode::Exact => 1.0,
        GradientMode::Stochastic => problem.losses.oracle_scale(),
    }
}

/// Executes a built problem and computes its reports and artifacts.
pub fn execute(problem: Problem, config_hash: &str) -> Result<RunOutput, HarnessError> {
    let sim = Simulation {
        weights: &problem.weights,
        geometry: &problem.geometry,
        dynamics: &problem.dynamics,
        losses: &problem.losses,
        schedule: &problem.schedule,
        mode: problem.mode,
        x0: None,
        seed: problem.seed,
    };
    let trace = run(&sim, config_hash)?;
    let regret = regret_report(&trace, &problem.losses, &problem.path, &problem.dynamics, &problem.geometry)?;
    let disagreement = network_disagreement(&trace, &problem.geometry);
    let scale = oracle_scale(&problem);
    let bounds = match bound_inputs(&problem, &trace, scale, 1.0)? {
        Some(inputs) => Some(theorem1_bound(&inputs)?),
        None => None,
    };
    let mut out = RunOutput { problem, trace, regret, disagreement, bounds, oracle_scale: scale, files: Vec::new() };
    out.files = artifacts(&out);
    Ok(out)
}

fn artifacts(out: &RunOutput) -> Vec<(String, String)> {
    let comment = format!("config_hash={} seed={}", out.trace.config_hash, out.trace.seed);
    let mut files = vec![
        ("regret.csv".to_string(), out.regret.curve_csv(&comment).as_str().to_string()),
        ("regret_summary.csv".to_string(), out.regret.summary_csv(&comment).as_str().to_string()),
        (
            "disagreement.csv".to_string(),
            crate::metrics::disagreement_csv(
                &comment,
                &out.disagreement,
                out.bounds.as_ref().map(|b| b.lemma1_curve.as_slice()),
            )
            .as_str()
            .to_string(),
        ),
        ("trajectory.csv".to_string(), trajectory_csv(&comment, &out.trace, &out.problem.path).as_str().to_string()),
        ("path.csv".to_string(), out.problem.path.to_csv(Some(&comment)).as_str().to_string()),
        ("iterates.csv".to_string(), out.trace.iterates_csv().as_str().to_string()),
        ("gradients.csv".to_string(), out.trace.gradients_csv().as_str().to_string()),
        ("eta.csv".to_string(), out.trace.eta_csv().as_str().to_string()),
    ];
    if let Some(b) = &out.bounds {
        let mut csv = b.summary_csv(&comment);
        csv.row(&["oracle_scale".to_string(), fmt_float(out.oracle_scale)]);
        csv.row(&["regret_bound".to_string(), out.regret_bound().map(fmt_float).unwrap_or_default()]);
        for note in &b.notes {
            csv.row(&["note".to_string(), note.replace(',', ";")]);
        }
        files.push(("bounds.csv".to_string(), csv.as_str().to_string()));
    }
    files
}

/// Target and every agent estimate per step.
pub fn trajectory_csv(comment: &str, trace: &RunTrace, path: &MinimizerPath) -> Csv {
    let d = trace.dim();
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|k| format!("target_x{k}")));
    for i in 0..trace.n() {
        header.extend((1..=d).map(|k| format!("agent{i}_x{k}")));
    }
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut csv = Csv::new(Some(comment), &refs);
    for (t, xs) in trace.iterates.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(path.states[t].iter().map(|v| fmt_float(*v)));
        for x in xs {
            row.extend(x.iter().map(|v| fmt_float(*v)));
        }
        csv.row(&row);
    }
    csv
}

/// Mean of `‖x_{i,t} − x*_t‖` over the final `window` iterates, per agent.
pub fn final_tracking_errors(trace: &RunTrace, path: &MinimizerPath, window: usize) -> Vec<f64> {
    let horizon = trace.horizon();
    let start = horizon + 1 - window.clamp(1, horizon + 1);
    (0..trace.n())
        .map(|i| {
            let errs: Vec<f64> = (start..=horizon).map(|t| (&trace.iterates[t][i] - &path.states[t]).norm()).collect();
            errs.iter().sum::<f64>() / errs.len() as f64
        })
        .collect()
}

/// Replicate 0 of any scenario.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    execute(build_problem(config, 0)?, &config.hash())
}

/// Replicate 0 of the tracking scenario.
pub fn run_tracking(config: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    if config.scenario != Scenario::Tracking {
        return Err(HarnessError::Config("run_tracking needs scenario = \"tracking\"".into()));
    }
    run_experiment(config)
}

/// Writes `(name, contents)` pairs into `dir`, creating it if needed.
pub fn write_files(dir: &Path, files: &[(String, String)]) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (name, contents) in files {
        let p = dir.join(name);
        fs::write(&p, contents).map_err(|e| io_err(&p, e))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

/// Normalized dynamic regret curves aggregated over replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub param: String,
    pub values: Vec<f64>,
    pub runs: usize,
    /// `mean[v][t]` over replicates.
    pub mean: Vec<Vec<f64>>,
    /// Sample standard deviation (zero for a single run).
    pub std: Vec<Vec<f64>>,
    pub config_hash: String,
    pub seed: u64,
}

impl SweepResult {
    /// Final-step mean normalized regret for each value.
    pub fn final_means(&self) -> Vec<f64> {
        self.mean.iter().map(|c| *c.last().unwrap_or(&0.0)).collect()
    }

    pub fn to_csv(&self) -> Csv {
        let comment = format!("config_hash={} seed={} param={} runs={}", self.config_hash, self.seed, self.param, self.runs);
        let mut csv = Csv::new(Some(&comment), &["value", "t", "mean_normalized_regret", "std_normalized_regret"]);
        for (v, value) in self.values.iter().enumerate() {
            for t in 0..self.mean[v].len() {
                csv.row(&[fmt_float(*value), (t + 1).to_string(), fmt_float(self.mean[v][t]), fmt_float(self.std[v][t])]);
            }
        }
        csv
    }

    pub fn summary_csv(&self) -> Csv {
        let comment = format!("config_hash={} seed={} param={} runs={}", self.config_hash, self.seed, self.param, self.runs);
        let mut csv = Csv::new(Some(&comment), &["value", "runs", "final_mean", "final_std"]);
        for (v, value) in self.values.iter().enumerate() {
            let last = self.mean[v].len().saturating_sub(1);
            csv.row(&[
                fmt_float(*value),
                self.runs.to_string(),
                fmt_float(self.mean[v].get(last).copied().unwrap_or(0.0)),
                fmt_float(self.std[v].get(last).copied().unwrap_or(0.0)),
            ]);
        }
        csv
    }
}

/// Runs `config.runs` replicates for every value of `param`. Replicate `r`
/// uses the same derived seed for every value. Replicates run in parallel;
/// aggregation happens in index order, so results do not depend on
/// scheduling.
pub fn sweep(config: &ExperimentConfig, param: &str, values: &[f64]) -> Result<SweepResult, HarnessError> {
    if values.is_empty() {
        return Err(range(param, "sweep needs at least one value"));
    }
    let configs = values
        .iter()
        .map(|&v| {
            let mut c = config.clone();
            c.set_numeric(param, v)?;
            Ok(c)
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let runs = config.runs;
    let hash = config.hash();
    let jobs: Vec<(usize, usize)> = (0..values.len()).flat_map(|v| (0..runs).map(move |r| (v, r))).collect();
    let curves = jobs
        .par_iter()
        .map(|&(v, r)| {
            let problem = build_problem(&configs[v], r as u64)?;
            let out = execute_curve(&problem, &hash)?;
            Ok(out)
        })
        .collect::<Result<Vec<Vec<f64>>, HarnessError>>()?;

    let mut mean = Vec::with_capacity(values.len());
    let mut std = Vec::with_capacity(values.len());
    for v in 0..values.len() {
        let group = &curves[v * runs..(v + 1) * runs];
        let len = group[0].len();
        let m: Vec<f64> = (0..len).map(|t| group.iter().map(|c| c[t]).sum::<f64>() / runs as f64).collect();
        let s: Vec<f64> = (0..len)
            .map(|t| {
                if runs < 2 {
                    0.0
                } else {
                    (group.iter().map(|c| (c[t] - m[t]).powi(2)).sum::<f64>() / (runs - 1) as f64).sqrt()
                }
            })
            .collect();
        mean.push(m);
        std.push(s);
    }
    Ok(SweepResult { param: param.to_string(), values: values.to_vec(), runs, mean, std, config_hash: hash, seed: config.seed })
}

fn execute_curve(problem: &Problem, hash: &str) -> Result<Vec<f64>, HarnessError> {
    let sim = Simulation {
        weights: &problem.weights,
        geometry: &problem.geometry,
        dynamics: &problem.dynamics,
        losses: &problem.losses,
        schedule: &problem.schedule,
        mode: problem.mode,
        x0: None,
        seed: problem.seed,
    };
    let trace = run(&sim, hash)?;
    Ok(regret_report(&trace, &problem.losses, &problem.path, &problem.dynamics, &problem.geometry)?.normalized)
}

// ---------------------------------------------------------------------------
// Bound verification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VerifyGeometry {
    /// `[-1, 1]²` with the Euclidean geometry.
    EuclideanBox,
    /// Floored simplex in three dimensions (floor 0.01) with KL.
    KlSimplex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VerifyGraph {
    Grid,
    Complete,
}

/// One configuration of the synthetic verification suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VerifyCase {
    pub geometry: VerifyGeometry,
    /// `A = I` when false; a contraction otherwise (`0.9·I` on the box,
    /// `0.9·I + 0.1·J/d` on the simplex).
    pub contraction: bool,
    pub n: usize,
    pub horizon: usize,
    pub graph: VerifyGraph,
    pub loss: SyntheticKind,
    pub mode: GradientMode,
}

/// Half-width of the gradient noise in stochastic verification cases.
pub const VERIFY_GRADIENT_NOISE: f64 = 0.5;

impl VerifyCase {
    /// The full grid: 2 geometries × 2 dynamics × n ∈ {4, 9} × T ∈ {100, 300}
    /// × 2 graphs × 2 loss families × 2 gradient modes.
    pub fn all() -> Vec<Self> {
        let mut out = Vec::new();
        for geometry in [VerifyGeometry::EuclideanBox, VerifyGeometry::KlSimplex] {
            for contraction in [false, true] {
                for n in [4, 9] {
                    for horizon in [100, 300] {
                        for graph in [VerifyGraph::Grid, VerifyGraph::Complete] {
                            for loss in [SyntheticKind::Quadratic, SyntheticKind::Linear] {
                                for mode in [GradientMode::Exact, GradientMode::Stochastic] {
                                    out.push(Self { geometry, contraction, n, horizon, graph, loss, mode });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn label(&self) -> String {
        format!(
            "{}/{}/n{}/T{}/{}/{}/{}",
            match self.geometry {
                VerifyGeometry::EuclideanBox => "euclidean_box",
                VerifyGeometry::KlSimplex => "kl_simplex",
            },
            if self.contraction { "contraction" } else { "identity" },
            self.n,
            self.horizon,
            match self.graph {
                VerifyGraph::Grid => "grid",
                VerifyGraph::Complete => "complete",
            },
            match self.loss {
                SyntheticKind::Quadratic => "quadratic",
                SyntheticKind::Linear => "linear",
            },
            match self.mode {
                GradientMode::Exact => "exact",
                GradientMode::Stochastic => "stochastic",
            },
        )
    }

    /// Builds the problem for `seed`.
    pub fn problem(&self, seed: u64) -> Result<Problem, HarnessError> {
        let (geometry, a) = match self.geometry {
            VerifyGeometry::EuclideanBox => {
                let g = MirrorGeometry::euclidean(Domain::symmetric_box(2, 1.0)?)?;
                let a = if self.contraction {
                    LinearDynamics::scaled_identity(2, 0.9)?
                } else {
                    LinearDynamics::identity(2)
                };
                (g, a)
            }
            VerifyGeometry::KlSimplex => {
                let g = MirrorGeometry::kl(3, 0.01)?;
                let a = if self.contraction {
                    LinearDynamics::new(Matrix::identity(3, 3) * 0.9 + Matrix::from_element(3, 3, 0.1 / 3.0))?
                } else {
                    LinearDynamics::identity(3)
                };
                (g, a)
            }
        };
        let side = (self.n as f64).sqrt().round() as usize;
        let graph = match self.graph {
            VerifyGraph::Grid if side * side == self.n => build_grid_graph(side, side)?,
            VerifyGraph::Grid => build_grid_graph(1, self.n)?,
            VerifyGraph::Complete => build_complete_graph(self.n)?,
        };
        let weights = metropolis_weights(&graph)?;
        let sigma2 = second_singular_value(&weights)?.sigma2;
        let spec = SuiteSpec::new(self.loss, self.n, self.horizon, a.clone(), seed);
        let (losses, path) = synthetic_suite(&spec, &geometry)?;
        let losses = match self.mode {
            GradientMode::Exact => losses,
            GradientMode::Stochastic => losses.with_gradient_noise(VERIFY_GRADIENT_NOISE),
        };
        let schedule = StepSchedule::inv_sqrt(0.5, self.horizon)?;
        Ok(Problem { weights, sigma2, geometry, dynamics: a, losses, path, schedule, mode: self.mode, seed })
    }
}

/// Checks of one `(case, seed)` run.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseOutcome {
    pub case: VerifyCase,
    pub seed: u64,
    /// `min_t (lemma1_bound[t] − disagreement[t])`.
    pub lemma1_slack: f64,
    /// Index attaining the minimum slack.
    pub lemma1_worst_t: usize,
    pub regret: f64,
    /// Theorem 1 (exact) or Theorem 2 (stochastic) total.
    pub theorem_bound: f64,
    pub local_regret: f64,
    pub lemma4_rhs: f64,
}

impl CaseOutcome {
    /// Pathwise checks: the network bound always; the regret bounds only for
    /// exact gradients (the stochastic bound holds in expectation).
    pub fn passed(&self) -> bool {
        self.lemma1_slack >= -1e-9
            && (self.case.mode == GradientMode::Stochastic
                || (self.theorem_bound - self.regret >= -1e-9 && self.lemma4_rhs - self.local_regret >= -1e-9))
    }
}

/// Runs one case; `l_scale` multiplies the declared `L` and `G`.
pub fn run_case(case: &VerifyCase, seed: u64, l_scale: f64) -> Result<CaseOutcome, HarnessError> {
    run_case_with(case, &case.problem(seed)?, seed, seed, l_scale)
}

/// Runs a prebuilt `problem` of `case` with the given oracle seed.
fn run_case_with(
    case: &VerifyCase,
    problem: &Problem,
    seed: u64,
    oracle_seed: u64,
    l_scale: f64,
) -> Result<CaseOutcome, HarnessError> {
    let sim = Simulation {
        weights: &problem.weights,
        geometry: &problem.geometry,
        dynamics: &problem.dynamics,
        losses: &problem.losses,
        schedule: &problem.schedule,
        mode: problem.mode,
        x0: None,
        seed: oracle_seed,
    };
    let trace = run(&sim, "")?;
    let inputs = bound_inputs(problem, &trace, 1.0, l_scale)?.expect("verification domains are bounded");
    let report = theorem1_bound(&inputs)?;
    let curve = match case.mode {
        GradientMode::Exact => report.lemma1_curve.clone(),
        GradientMode::Stochastic => crate::metrics::lemma1_bound(
            inputs.g.expect("set"),
            inputs.n,
            inputs.sigma2,
            &inputs.etas,
        )?,
    };
    let disagreement = network_disagreement(&trace, &problem.geometry);
    let (lemma1_worst_t, lemma1_slack) = disagreement
        .iter()
        .zip(&curve)
        .map(|(d, b)| b - d)
        .enumerate()
        .fold((0, f64::INFINITY), |best, (t, s)| if s < best.1 { (t, s) } else { best });
    let regret = regret_report(&trace, &problem.losses, &problem.path, &problem.dynamics, &problem.geometry)?.dynamic;
    let theorem_bound = match case.mode {
        GradientMode::Exact => report.theorem1_total,
        GradientMode::Stochastic => report.theorem2_total.expect("g set"),
    };
    Ok(CaseOutcome {
        case: *case,
        seed,
        lemma1_slack,
        lemma1_worst_t,
        regret,
        theorem_bound,
        local_regret: local_regret(&trace, &problem.losses, &problem.path)?,
        lemma4_rhs: report.lemma4_rhs,
    })
}

/// Cross-seed mean regret of a stochastic case against its bound.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanOutcome {
    pub case: VerifyCase,
    pub runs: usize,
    pub mean_regret: f64,
    pub bound: f64,
}

impl MeanOutcome {
    pub fn passed(&self) -> bool {
        self.bound - self.mean_regret >= -1e-9
    }
}

/// Mean regret of `runs` replicates of `case` that share the losses built
/// from `loss_seed` and differ in the oracle seed, `derive(loss_seed, r)`.
pub fn mean_regret_check(case: &VerifyCase, loss_seed: u64, runs: usize, l_scale: f64) -> Result<MeanOutcome, HarnessError> {
    let problem = case.problem(loss_seed)?;
    let outcomes = (0..runs as u64)
        .into_par_iter()
        .map(|r| run_case_with(case, &problem, loss_seed, seed::derive(loss_seed, r), l_scale))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(mean_of(case, &outcomes))
}

fn mean_of(case: &VerifyCase, outcomes: &[CaseOutcome]) -> MeanOutcome {
    let runs = outcomes.len();
    MeanOutcome {
        case: *case,
        runs,
        mean_regret: outcomes.iter().map(|o| o.regret).sum::<f64>() / runs as f64,
        bound: outcomes.iter().map(|o| o.theorem_bound).fold(f64::INFINITY, f64::min),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub outcomes: Vec<CaseOutcome>,
    pub means: Vec<MeanOutcome>,
    pub l_scale: f64,
}

impl VerifyReport {
    pub fn violations(&self) -> usize {
        self.outcomes.iter().filter(|o| !o.passed()).count() + self.means.iter().filter(|m| !m.passed()).count()
    }

    pub fn passed(&self) -> bool {
        self.violations() == 0
    }

    /// One row per check; stochastic mean checks carry `seed = mean`.
    pub fn to_csv(&self) -> Csv {
        let comment = format!("verify_bounds l_scale={}", fmt_float(self.l_scale));
        let mut csv = Csv::new(Some(&comment), &["case", "seed", "check", "value", "bound", "slack", "t", "passed"]);
        for o in &self.outcomes {
            let exact = o.case.mode == GradientMode::Exact;
            let seed = o.seed.to_string();
            csv.row(&[
                o.case.label(),
                seed.clone(),
                "lemma1".to_string(),
                String::new(),
                String::new(),
                fmt_float(o.lemma1_slack),
                o.lemma1_worst_t.to_string(),
                (o.lemma1_slack >= -1e-9).to_string(),
            ]);
            let theorem = if exact { "theorem1" } else { "theorem2_single_run" };
            let ok = o.theorem_bound - o.regret >= -1e-9;
            csv.row(&[
                o.case.label(),
                seed.clone(),
                theorem.to_string(),
                fmt_float(o.regret),
                fmt_float(o.theorem_bound),
                fmt_float(o.theorem_bound - o.regret),
                o.case.horizon.to_string(),
                if exact { ok.to_string() } else { format!("info_{ok}") },
            ]);
            if exact {
                let ok = o.lemma4_rhs - o.local_regret >= -1e-9;
                csv.row(&[
                    o.case.label(),
                    seed,
                    "lemma4".to_string(),
                    fmt_float(o.local_regret),
                    fmt_float(o.lemma4_rhs),
                    fmt_float(o.lemma4_rhs - o.local_regret),
                    o.case.horizon.to_string(),
                    ok.to_string(),
                ]);
            }
        }
        for m in &self.means {
            csv.row(&[
                m.case.label(),
                "mean".to_string(),
                "theorem2".to_string(),
                fmt_float(m.mean_regret),
                fmt_float(m.bound),
                fmt_float(m.bound - m.mean_regret),
                m.case.horizon.to_string(),
                m.passed().to_string(),
            ]);
        }
        csv
    }
}

/// Runs every case of [`VerifyCase::all`] for seeds `0..seeds`.
pub fn verify_bounds(seeds: usize, l_scale: f64) -> Result<VerifyReport, HarnessError> {
    verify_cases(&VerifyCase::all(), seeds, l_scale)
}

/// Runs the given cases for seeds `0..seeds`.
pub fn verify_cases(cases: &[VerifyCase], seeds: usize, l_scale: f64) -> Result<VerifyReport, HarnessError> {
    if seeds == 0 {
        return Err(range("seeds", "must be >= 1"));
    }
    let jobs: Vec<(usize, u64)> = (0..cases.len()).flat_map(|c| (0..seeds as u64).map(move |s| (c, s))).collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(c, s)| run_case(&cases[c], s, l_scale))
        .collect::<Result<Vec<_>, _>>()?;
    let means = cases
        .iter()
        .enumerate()
        .filter(|(_, c)| c.mode == GradientMode::Stochastic)
        .map(|(c, case)| mean_of(case, &outcomes[c * seeds..(c + 1) * seeds]))
        .collect();
    Ok(VerifyReport { outcomes, means, l_scale })
}
