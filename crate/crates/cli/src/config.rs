//! JSON run configuration. Every key is optional; command-line flags win.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

/// A scalar or a list in the config file: `"delta": 0.5` or `"delta": [0.1, 0.2]`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v],
            OneOrMany::Many(v) => v,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub algo: Option<String>,
    pub suite: Option<String>,
    #[serde(rename = "N")]
    pub signal_length: Option<OneOrMany<usize>>,
    pub delta: Option<OneOrMany<f64>>,
    pub rho: Option<OneOrMany<f64>>,
    pub delta_count: Option<usize>,
    pub rho_count: Option<usize>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<String>,
    pub parallelism: Option<usize>,
    pub no_cutoff: Option<bool>,
    pub margin: Option<f64>,
    pub transition: Option<PathBuf>,
    pub full_n: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Seed precedence: flag, then config file, then `SL0LAB_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, config: &FileConfig) -> Result<u64> {
    if let Some(s) = flag.or(config.seed) {
        return Ok(s);
    }
    match std::env::var("SL0LAB_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("SL0LAB_SEED = `{v}` is not an unsigned integer")),
        Err(_) => Ok(0),
    }
}
