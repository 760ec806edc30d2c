//! Run configuration: one TOML document with a section per component.
//!
//! ```toml
//! master_seed = 42
//! output_dir = "out"
//!
//! [task]
//! senses_per_token = 3
//! ambiguous_tokens = [2]
//! context_overlap = 0.3
//!
//! [monitor]
//! theta = 1.5
//! ```
//!
//! Every key is optional; an empty document is the easy scenario. Unknown
//! keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::MonitorConfig;
use crate::field::RelevanceBoundary;
use crate::tu_stream::TimingModel;
use crate::world::TaskConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("{0}")]
    Syntax(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskConfig,
    pub monitor: MonitorConfig,
    pub timing: TimingModel,
    pub boundary: RelevanceBoundary,
    pub output_dir: PathBuf,
    pub master_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: TaskConfig::default(),
            monitor: MonitorConfig::default(),
            timing: TimingModel::default(),
            boundary: RelevanceBoundary::default(),
            output_dir: PathBuf::from("out"),
            master_seed: 42,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.task.validate().map_err(|e| invalid(&e))?;
        self.monitor.validate().map_err(|e| invalid(&e))?;
        self.timing.validate().map_err(|e| invalid(&e))?;
        self.boundary.validate().map_err(|e| invalid(&e))?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

pub fn parse_config(source: &str) -> Result<RunConfig, ConfigError> {
    let config: RunConfig =
        toml::from_str(source).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    parse_config(&text)
}
