use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::consensus::ConsensusConfig;
use crate::guidelines::{load_common, CommonGuidelineSet};
use crate::ingest::IngestConfig;
use crate::provider::ProviderConfig;

pub const DEFAULT_CODE_TTL_MS: i64 = 86_400_000;

/// Settings shared by `coview serve` and the batch commands (`--config`).
///
/// ```toml
/// listen = "127.0.0.1:8080"
/// data_dir = "/var/lib/coview"
/// guidelines_path = "guidelines.json"
///
/// [provider]
/// kind = "mock"
///
/// [consensus]
/// max_iterations = 3
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    /// Holds `events.jsonl`. Without it the log lives in memory only.
    pub data_dir: Option<PathBuf>,
    pub guidelines_path: Option<PathBuf>,
    pub provider: ProviderConfig,
    pub consensus: ConsensusConfig,
    pub ingest: IngestConfig,
    pub code_ttl_ms: i64,
    /// Fixes the code/token generator; random when unset.
    pub seed: Option<u64>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            data_dir: None,
            guidelines_path: None,
            provider: ProviderConfig::default(),
            consensus: ConsensusConfig::default(),
            ingest: IngestConfig::default(),
            code_ttl_ms: DEFAULT_CODE_TTL_MS,
            seed: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut cfg: ServiceConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        // relative paths in the file are relative to the file
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.data_dir,
            &mut cfg.guidelines_path,
            &mut cfg.provider.lexicon_path,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.consensus
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.ingest
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.code_ttl_ms <= 0 {
            return Err(ConfigError::Invalid("code_ttl_ms must be positive".into()));
        }
        Ok(())
    }

    pub fn guidelines(&self) -> Result<CommonGuidelineSet, ConfigError> {
        match &self.guidelines_path {
            None => Ok(CommonGuidelineSet::default_set()),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
                load_common(&text).map_err(|e| ConfigError::Parse {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })
            }
        }
    }
}
