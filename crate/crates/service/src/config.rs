use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shieldup_core::trial::TrialConfig;

/// Environment variable holding the researcher bearer token.
pub const RESEARCHER_TOKEN_ENV: &str = "SHIELDUP_RESEARCHER_TOKEN";
/// Environment variable naming the data directory.
pub const DATA_DIR_ENV: &str = "SHIELDUP_DATA_DIR";

/// Contents of the `--config` JSON file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default)]
    pub trial: TrialConfig,
    /// Falls back to `SHIELDUP_RESEARCHER_TOKEN`, then to a random token
    /// printed at startup.
    #[serde(default)]
    pub researcher_token: Option<String>,
    /// Origins allowed by CORS; empty allows any origin.
    #[serde(default)]
    pub allowed_origins: Vec<String>,
}

impl ServiceConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub port: u16,
    pub corpus_dir: PathBuf,
    /// Without a data directory the trial lives in memory only.
    pub data_dir: Option<PathBuf>,
    pub config: ServiceConfig,
}
