//! Experiment specification: JSON file and command-line flags merged into one
//! validated, fully resolved [`ExperimentSpec`].

use std::fmt;
use std::path::{Path, PathBuf};

use mace_core::acquisition::{DEFAULT_DELTA, DEFAULT_NU, DEFAULT_XI};
use mace_core::engine::{Ensemble, InitialDesign, Mode, RunConfig, DEFAULT_RHO};
use mace_core::gp::DEFAULT_RESTARTS;
use mace_core::moo::{DemoConfig, DEFAULT_ARCHIVE_CAPACITY, DEFAULT_EVALUATIONS, DEFAULT_POPULATION};
use mace_core::problems::builtin;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const DEFAULT_REPEATS_UNCONSTRAINED: usize = 20;
pub const DEFAULT_REPEATS_CONSTRAINED: usize = 12;
pub const DEFAULT_TIMEOUT_SECS: f64 = 300.0;
pub const EXTERNAL_PREFIX: &str = "cmd:";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid `{key}`: {message}")]
    Invalid { key: &'static str, message: String },
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(key: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Mace,
    Omace,
    Random,
    SequentialEi,
    SequentialLcb,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Mace => "mace",
            Algorithm::Omace => "omace",
            Algorithm::Random => "random",
            Algorithm::SequentialEi => "sequential-ei",
            Algorithm::SequentialLcb => "sequential-lcb",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything needed to reproduce a campaign. Optional fields are filled in
/// by [`ExperimentSpec::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Built-in problem name, or `cmd:<shell command>` for an external evaluator.
    pub problem: String,
    /// Input dimension; required for external evaluators.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// Number of constraints; external evaluators only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraints: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default = "default_batch")]
    pub batch: usize,
    /// Total evaluator calls per run, initial design included.
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_n_init")]
    pub n_init: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeats: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_ensemble")]
    pub ensemble: String,
    #[serde(default = "default_xi")]
    pub xi: f64,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_population")]
    pub demo_population: usize,
    #[serde(default = "default_demo_evaluations")]
    pub demo_evaluations: usize,
    #[serde(default = "default_archive")]
    pub demo_archive: usize,
    #[serde(default = "default_restarts")]
    pub gp_restarts: usize,
    #[serde(default = "default_design")]
    pub initial_design: InitialDesign,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_parallel: Option<usize>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_algorithm() -> Algorithm {
    Algorithm::Mace
}
fn default_batch() -> usize {
    5
}
fn default_budget() -> usize {
    100
}
fn default_n_init() -> usize {
    20
}
fn default_ensemble() -> String {
    "pi,ei,lcb".into()
}
fn default_xi() -> f64 {
    DEFAULT_XI
}
fn default_nu() -> f64 {
    DEFAULT_NU
}
fn default_delta() -> f64 {
    DEFAULT_DELTA
}
fn default_rho() -> f64 {
    DEFAULT_RHO
}
fn default_population() -> usize {
    DEFAULT_POPULATION
}
fn default_demo_evaluations() -> usize {
    DEFAULT_EVALUATIONS
}
fn default_archive() -> usize {
    DEFAULT_ARCHIVE_CAPACITY
}
fn default_restarts() -> usize {
    DEFAULT_RESTARTS
}
fn default_design() -> InitialDesign {
    InitialDesign::LatinHypercube
}
fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_SECS
}
fn default_out() -> PathBuf {
    PathBuf::from("mace-out")
}

/// Parses a JSON object into a spec, reporting the key path of any error.
pub fn parse_value(value: Value) -> Result<ExperimentSpec, ConfigError> {
    serde_path_to_error::deserialize(value).map_err(|e| ConfigError::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

pub fn parse_str(json: &str) -> Result<ExperimentSpec, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(json);
    serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

/// Reads `path` (if any) as a JSON object, overlays `overrides` and returns
/// the resolved spec.
pub fn load(path: Option<&Path>, overrides: Map<String, Value>) -> Result<ExperimentSpec, ConfigError> {
    let mut base = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                path: p.to_path_buf(),
                source,
            })?;
            serde_json::from_str::<Value>(&text).map_err(|e| ConfigError::Parse {
                path: ".".into(),
                message: e.to_string(),
            })?
        }
        None => Value::Object(Map::new()),
    };
    let Value::Object(obj) = &mut base else {
        return Err(ConfigError::Parse {
            path: ".".into(),
            message: "configuration must be a JSON object".into(),
        });
    };
    obj.extend(overrides);
    parse_value(base)?.resolve()
}

/// The shape of the problem a spec refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResolvedShape {
    pub dim: usize,
    pub n_constraints: usize,
}

impl ExperimentSpec {
    /// Minimal spec for `problem` with every other field at its default.
    pub fn new(problem: impl Into<String>) -> Self {
        let mut obj = Map::new();
        obj.insert("problem".into(), Value::String(problem.into()));
        parse_value(Value::Object(obj)).expect("defaults are valid")
    }

    pub fn external_command(&self) -> Option<&str> {
        self.problem.strip_prefix(EXTERNAL_PREFIX).map(str::trim)
    }

    pub fn shape(&self) -> Result<ResolvedShape, ConfigError> {
        match self.external_command() {
            Some(cmd) => {
                if cmd.is_empty() {
                    return Err(invalid("problem", "empty evaluator command"));
                }
                let dim = self
                    .dim
                    .ok_or_else(|| invalid("dim", "required for external evaluators"))?;
                Ok(ResolvedShape {
                    dim,
                    n_constraints: self.constraints.unwrap_or(0),
                })
            }
            None => {
                let p = builtin(&self.problem).map_err(|e| invalid("problem", e.to_string()))?;
                if self.dim.is_some_and(|d| d != p.dim()) {
                    return Err(invalid("dim", format!("`{}` has dimension {}", p.name, p.dim())));
                }
                if self.constraints.is_some_and(|c| c != p.n_constraints()) {
                    return Err(invalid(
                        "constraints",
                        format!("`{}` has {} constraints", p.name, p.n_constraints()),
                    ));
                }
                Ok(ResolvedShape {
                    dim: p.dim(),
                    n_constraints: p.n_constraints(),
                })
            }
        }
    }

    /// Validates every field and fills in the defaults that depend on the
    /// problem. Idempotent.
    pub fn resolve(mut self) -> Result<Self, ConfigError> {
        let shape = self.shape()?;
        if shape.dim == 0 {
            return Err(invalid("dim", "must be >= 1"));
        }
        if self.external_command().is_some() {
            self.constraints = Some(shape.n_constraints);
        }
        let mode = *self.mode.get_or_insert(if shape.n_constraints > 0 {
            Mode::Constrained
        } else {
            Mode::Unconstrained
        });
        if mode == Mode::Constrained && shape.n_constraints == 0 {
            return Err(invalid("mode", "constrained mode needs a problem with constraints"));
        }
        if self.algorithm == Algorithm::Omace && mode != Mode::Constrained {
            return Err(invalid("algorithm", "omace needs constrained mode"));
        }
        let repeats = *self.repeats.get_or_insert(match mode {
            Mode::Unconstrained => DEFAULT_REPEATS_UNCONSTRAINED,
            Mode::Constrained => DEFAULT_REPEATS_CONSTRAINED,
        });
        if repeats < 1 {
            return Err(invalid("repeats", "must be >= 1"));
        }
        match self.algorithm {
            Algorithm::SequentialEi => {
                self.batch = 1;
                self.ensemble = "ei".into();
            }
            Algorithm::SequentialLcb => {
                self.batch = 1;
                self.ensemble = "lcb".into();
            }
            _ => {}
        }
        let ensemble = Ensemble::parse(&self.ensemble).map_err(|e| invalid("ensemble", e.to_string()))?;
        self.ensemble = ensemble.to_string();
        if self.batch < 1 {
            return Err(invalid("batch", "must be >= 1"));
        }
        if self.n_init < 2 {
            return Err(invalid("n_init", "must be >= 2"));
        }
        if self.budget < self.n_init {
            return Err(invalid(
                "budget",
                format!("must be at least n_init ({}), got {}", self.n_init, self.budget),
            ));
        }
        if !(self.xi >= 0.0) || !self.xi.is_finite() {
            return Err(invalid("xi", format!("must be finite and >= 0, got {}", self.xi)));
        }
        if !(self.nu > 0.0) || !self.nu.is_finite() {
            return Err(invalid("nu", format!("must be finite and > 0, got {}", self.nu)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid("delta", format!("must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.rho >= 0.0) || !self.rho.is_finite() {
            return Err(invalid("rho", format!("must be finite and >= 0, got {}", self.rho)));
        }
        if self.demo_population < 4 {
            return Err(invalid("demo_population", "must be >= 4"));
        }
        if self.demo_archive < 1 {
            return Err(invalid("demo_archive", "must be >= 1"));
        }
        if self.gp_restarts < 1 {
            return Err(invalid("gp_restarts", "must be >= 1"));
        }
        if self.max_parallel == Some(0) {
            return Err(invalid("max_parallel", "must be >= 1"));
        }
        if !(self.timeout_secs > 0.0) || !self.timeout_secs.is_finite() {
            return Err(invalid(
                "timeout_secs",
                format!("must be finite and > 0, got {}", self.timeout_secs),
            ));
        }
        Ok(self)
    }

    pub fn resolved_mode(&self) -> Mode {
        self.mode.unwrap_or(Mode::Unconstrained)
    }

    pub fn resolved_repeats(&self) -> usize {
        self.repeats.unwrap_or(DEFAULT_REPEATS_UNCONSTRAINED)
    }

    /// Engine configuration for the run with the given seed.
    pub fn run_config(&self, seed: u64) -> RunConfig {
        let iterations = (self.budget - self.n_init).div_ceil(self.batch);
        RunConfig {
            n_init: self.n_init,
            n_iter: iterations,
            batch_size: self.batch,
            xi: self.xi,
            nu: self.nu,
            delta: self.delta,
            rho: self.rho,
            demo: DemoConfig {
                population_size: self.demo_population,
                max_evaluations: self.demo_evaluations,
                archive_capacity: self.demo_archive,
                ..DemoConfig::default()
            },
            seed,
            mode: self.resolved_mode(),
            ensemble: Ensemble::parse(&self.ensemble).unwrap_or_default(),
            gp_restarts: self.gp_restarts,
            initial_design: self.initial_design,
            max_evaluations: Some(self.budget),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }
}
