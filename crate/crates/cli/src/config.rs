//! Config-file layer. Precedence is built-in defaults < config file <
//! command-line flags, so every field here is optional and only consulted
//! when the matching flag is absent.

use serde::Deserialize;
use std::path::Path;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub family: Option<String>,
    pub mode: Option<String>,
    pub source: Option<String>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub tau: Option<f64>,
    pub xi: Option<f64>,
    pub max_iters: Option<u64>,
    pub eval_every: Option<u64>,
    pub patience: Option<u32>,
    pub tolerance: Option<f64>,
    pub batch_size: Option<usize>,
    pub threads: Option<usize>,
    pub test_frac: Option<f64>,
    pub valid_frac: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("bad config {}: {e}", path.display()))
    }
}
