use std::path::Path;

use affspace::baseline::BaselineConfig;
use affspace::model::{ModelConfig, TrainConfig};
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

pub const RUN_CONFIG_VERSION: u32 = 1;

fn default_version() -> u32 {
    RUN_CONFIG_VERSION
}

fn default_configs() -> String {
    "all".into()
}

/// Everything a training/evaluation run needs besides file paths. Unknown
/// keys are rejected; every seed has an explicit default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    /// Free-form label copied into reports.
    #[serde(default)]
    pub scenario: String,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    /// Input configurations for `evaluate`: `all` or e.g. `object+effect,effect`.
    #[serde(default = "default_configs")]
    pub evaluate: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: RUN_CONFIG_VERSION,
            scenario: String::new(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            baseline: BaselineConfig::default(),
            evaluate: default_configs(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if cfg.version != RUN_CONFIG_VERSION {
            bail!("unsupported run config version {}", cfg.version);
        }
        Ok(cfg)
    }
}
