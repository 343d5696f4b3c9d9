use std::path::Path;

use anyhow::Context;
use evocnn::dataset::SplitSpec;
use evocnn::search::SearchConfig;
use serde::{Deserialize, Serialize};

/// Everything a run needs besides the data location: the search and
/// training parameters at the top level, and the `[split]` table saying how
/// the training file is divided.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub search: SearchConfig,
    pub split: SplitSpec,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable as TOML")
    }
}
