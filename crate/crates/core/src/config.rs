//! TOML run configuration.
//!
//! ```toml
//! schema_version = 1
//!
//! [scenario]          # any ScenarioConfig field; omitted ones keep defaults
//! fleet_size_mean = 200
//! night_epochs = 144
//! epoch_minutes = 5.0
//!
//! [mpc]               # horizon_end and epochs_per_hour follow the scenario
//! lookahead_hours = 2
//! solver_mode = "relaxed"
//!
//! [run]
//! scheduler = "mpc"   # mpc | spuc-static | spuc-updated
//! seed = 7            # overrides scenario.rng_seed
//! wind = "synthetic"  # or "csv:<path>"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::SchedulerKind;
use crate::mpc::MpcConfig;
use crate::scenario::ScenarioConfig;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("unsupported schema_version {0} (expected {CONFIG_SCHEMA_VERSION})")]
    SchemaVersion(u32),
    #[error("bad wind source {0:?} (expected `synthetic` or `csv:<path>`)")]
    WindSource(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindSource {
    Synthetic,
    Csv(PathBuf),
}

impl std::str::FromStr for WindSource {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "synthetic" => Ok(Self::Synthetic),
            _ => match s.strip_prefix("csv:") {
                Some(p) if !p.is_empty() => Ok(Self::Csv(PathBuf::from(p))),
                _ => Err(ConfigError::WindSource(s.into())),
            },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub scheduler: Option<SchedulerKind>,
    pub seed: Option<u64>,
    pub wind: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub schema_version: u32,
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub mpc: MpcConfig,
    #[serde(default)]
    pub run: RunSection,
}

impl ConfigFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if cfg.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(ConfigError::SchemaVersion(cfg.schema_version));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    pub fn wind_source(&self) -> Result<WindSource, ConfigError> {
        self.run.wind.as_deref().unwrap_or("synthetic").parse()
    }
}
