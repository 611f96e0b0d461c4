//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dsl::{parse_with_primitives, Grammar, ParseError};
use crate::grpo::TrainingConfig;
use crate::inner::TaskConfig;
use crate::meta::{ColdStartConfig, EvolveMode, OuterConfig};

/// Environment variable that overrides the configured master seed.
pub const SEED_ENV: &str = "METAFORGE_SEED";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum RunMode {
    Standard,
    Population,
    /// A single inner run under a fixed expression.
    Baseline(String),
}

impl FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "standard" => Ok(RunMode::Standard),
            "population" => Ok(RunMode::Population),
            _ => match s.strip_prefix("baseline:") {
                Some(expr) => Ok(RunMode::Baseline(expr.trim().to_string())),
                None => Err(format!("unknown mode `{s}` (expected standard, population or baseline:<expr>)")),
            },
        }
    }
}

impl TryFrom<String> for RunMode {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<RunMode> for String {
    fn from(m: RunMode) -> String {
        match m {
            RunMode::Standard => "standard".into(),
            RunMode::Population => "population".into(),
            RunMode::Baseline(e) => format!("baseline:{e}"),
        }
    }
}

impl RunMode {
    pub fn evolve_mode(&self) -> Option<EvolveMode> {
        match self {
            RunMode::Standard => Some(EvolveMode::Standard),
            RunMode::Population => Some(EvolveMode::Population),
            RunMode::Baseline(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColdStartSection {
    pub enabled: bool,
    /// Exemplar file, one expression per line; the built-in set if absent.
    pub corpus: Option<PathBuf>,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub tolerance: f64,
}

impl Default for ColdStartSection {
    fn default() -> Self {
        let c = ColdStartConfig::default();
        Self {
            enabled: true,
            corpus: None,
            learning_rate: c.learning_rate,
            max_epochs: c.max_epochs,
            tolerance: c.tolerance,
        }
    }
}

impl ColdStartSection {
    pub fn fit_config(&self) -> ColdStartConfig {
        ColdStartConfig {
            learning_rate: self.learning_rate,
            max_epochs: self.max_epochs,
            tolerance: self.tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: RunMode,
    pub parallelism: usize,
    pub out: Option<PathBuf>,
    pub task: TaskConfig,
    pub inner: TrainingConfig,
    pub outer: OuterConfig,
    pub grammar: Grammar,
    pub cold_start: ColdStartSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: RunMode::Standard,
            parallelism: 1,
            out: None,
            task: TaskConfig::default(),
            inner: TrainingConfig::default(),
            outer: OuterConfig::default(),
            grammar: Grammar::default(),
            cold_start: ColdStartSection::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Syntax(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("baseline expression does not parse: {0}")]
    BaselineExpr(ParseError),
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))
    }

    /// Reads, applies the seed override and validates.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.apply_env()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("{SEED_ENV}=`{v}` is not a u64")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| ConfigError::Invalid(m);
        let k = self.task.num_primitives().map_err(|e| invalid(e.to_string()))?;
        match self.task.family {
            crate::primitives::TaskFamily::Trajectory => self.task.trajectory.validate(),
            crate::primitives::TaskFamily::MathText => self.task.math.validate(),
        }
        .map_err(|e| invalid(format!("task: {e}")))?;
        self.inner.validate().map_err(|e| invalid(format!("inner: {}", e.0)))?;
        self.outer.validate().map_err(invalid)?;
        self.grammar.validate().map_err(|e| invalid(format!("grammar: {e}")))?;
        if self.grammar.num_primitives != k {
            return Err(invalid(format!(
                "grammar.num_primitives = {} but primitive set `{}` has {k}",
                self.grammar.num_primitives,
                self.task.primitive_set_name()
            )));
        }
        if self.parallelism == 0 {
            return Err(invalid("parallelism must be at least 1".into()));
        }
        if let RunMode::Baseline(expr) = &self.mode {
            parse_with_primitives(expr, k).map_err(ConfigError::BaselineExpr)?;
        }
        Ok(())
    }
}
