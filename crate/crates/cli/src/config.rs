//! TOML run configuration. Every field is optional; command-line flags win
//! over the file, and the file wins over built-in defaults.
//!
//! ```toml
//! seed = 7
//!
//! [model]
//! layers = 2
//! hidden = 32
//! alpha = 0.5
//!
//! [train]
//! steps = 400
//! schedule = "finetune"
//! direction = "l2m"
//!
//! [generate]
//! strategy = "greedy"
//! ```

use anyhow::{Context, Result};
use serde::Deserialize;
use std::path::Path;
use tunesmith_core::model::AttNorm;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub model: ModelSection,
    pub train: TrainSection,
    pub generate: GenerateSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub layers: Option<usize>,
    pub hidden: Option<usize>,
    pub heads: Option<usize>,
    pub ff: Option<usize>,
    pub max_len: Option<usize>,
    pub dropout: Option<f64>,
    pub alpha: Option<f64>,
    pub att_norm: Option<AttNorm>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub warmup: Option<usize>,
    pub mask_ratio: Option<f64>,
    pub schedule: Option<String>,
    pub direction: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub strategy: Option<String>,
    pub top_k: Option<usize>,
    pub temperature: Option<f64>,
    pub max_sentence_factor: Option<usize>,
    pub step_budget: Option<usize>,
}

impl RunConfig {
    /// The file at `path`, or an empty config.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn seed(&self, flag: Option<u64>) -> Result<u64> {
        flag.or(self.seed).context("a seed is required: pass --seed or set `seed` in the config file")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_parses() {
        let cfg: RunConfig = toml::from_str("seed = 3\n[model]\nalpha = 0.0\natt_norm = \"squared\"\n").unwrap();
        assert_eq!(cfg.seed(None).unwrap(), 3);
        assert_eq!(cfg.seed(Some(9)).unwrap(), 9);
        assert_eq!(cfg.model.alpha, Some(0.0));
        assert_eq!(cfg.model.att_norm, Some(AttNorm::Squared));
        assert!(cfg.train.steps.is_none());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[model]\nlayerz = 2\n").is_err());
        assert!(RunConfig::default().seed(None).is_err());
    }
}
