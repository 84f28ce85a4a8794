//! Run configuration: a TOML file whose top-level keys mirror
//! [`TrainerConfig`], with `[env]` and `[bridge]` sections.

use std::fs;
use std::path::{Path, PathBuf};

use arise_core::trainer::{TrainerConfig, TrainerError};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SEED_ENV_VAR: &str = "ARISE_SEED";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{SEED_ENV_VAR}={0:?} is not an unsigned integer")]
    SeedVar(String),
    #[error(transparent)]
    Invalid(#[from] TrainerError),
    #[error("bridge.command must name a program")]
    EmptyBridgeCommand,
}

/// Out-of-process policy adapter, spoken to over newline-delimited JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BridgeConfig {
    /// Program and arguments of the adapter; it talks over stdio.
    pub command: Vec<String>,
    #[serde(default = "default_gen_temperature")]
    pub temperature: f64,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
}

fn default_gen_temperature() -> f64 {
    0.7
}

fn default_top_p() -> f64 {
    0.95
}

fn default_max_tokens() -> usize {
    192
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunConfig {
    pub trainer: TrainerConfig,
    /// Write an intermediate library snapshot every this many steps; 0 keeps
    /// only the final one.
    pub snapshot_interval: u64,
    pub bridge: Option<BridgeConfig>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, path: &Path) -> Result<RunConfig, ConfigError> {
        let parse_err = |message: String| ConfigError::Parse { path: path.to_path_buf(), message };
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
        let bridge = match table.remove("bridge") {
            Some(v) => Some(BridgeConfig::deserialize(v).map_err(|e| parse_err(format!("[bridge]: {e}")))?),
            None => None,
        };
        let snapshot_interval = match table.remove("snapshot_interval") {
            Some(v) => u64::deserialize(v).map_err(|e| parse_err(format!("snapshot_interval: {e}")))?,
            None => 0,
        };
        let trainer = TrainerConfig::deserialize(toml::Value::Table(table)).map_err(|e| parse_err(e.to_string()))?;
        let cfg = RunConfig { trainer, snapshot_interval, bridge };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        RunConfig::from_toml_str(&text, path)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.trainer.validate()?;
        if let Some(b) = &self.bridge {
            if b.command.first().is_none_or(|c| c.is_empty()) {
                return Err(ConfigError::EmptyBridgeCommand);
            }
        }
        Ok(())
    }

    /// Seed precedence: `--seed` flag, then `ARISE_SEED`, then the file.
    pub fn apply_seed(&mut self, flag: Option<u64>, env_value: Option<String>) -> Result<(), ConfigError> {
        if let Some(s) = flag {
            self.trainer.seed = s;
        } else if let Some(v) = env_value {
            self.trainer.seed = v.trim().parse().map_err(|_| ConfigError::SeedVar(v))?;
        }
        Ok(())
    }

    /// SHA-256 over the resolved configuration serialized with sorted keys,
    /// so it does not depend on the key order of the source file.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let digest = Sha256::digest(serde_json::to_string(&value).expect("value serializes").as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
