use super::config::ModelConfig;
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::tensor::Matrix;
use serde::{Deserialize, Serialize};
use std::path::Path;

const FORMAT: &str = "tunesmith-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    #[serde(flatten)]
    value: Matrix,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: ModelConfig,
    tensors: Vec<NamedTensor>,
}

pub fn checkpoint_to_json(cfg: &ModelConfig, params: &ModelParams) -> Result<String> {
    let file = CheckpointFile {
        format: FORMAT.into(),
        version: VERSION,
        config: cfg.clone(),
        tensors: params
            .names()
            .iter()
            .zip(params.tensors())
            .map(|(n, t)| NamedTensor { name: n.clone(), value: t.clone() })
            .collect(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn checkpoint_from_json(text: &str) -> Result<(ModelConfig, ModelParams)> {
    let file: CheckpointFile = serde_json::from_str(text)?;
    if file.format != FORMAT {
        return Err(Error::Checkpoint(format!("unexpected format '{}'", file.format)));
    }
    if file.version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", file.version)));
    }
    file.config.validate()?;
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for t in file.tensors {
        if t.value.rows * t.value.cols != t.value.data.len() {
            return Err(Error::Checkpoint(format!("{}: data length does not match shape", t.name)));
        }
        names.push(t.name);
        tensors.push(t.value);
    }
    let params = ModelParams::from_parts(names, tensors);
    params.check_shapes(&file.config)?;
    Ok((file.config, params))
}

pub fn save_checkpoint(path: &Path, cfg: &ModelConfig, params: &ModelParams) -> Result<()> {
    std::fs::write(path, checkpoint_to_json(cfg, params)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParams)> {
    checkpoint_from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let cfg = ModelConfig::with_vocab(7, 9);
        let p = ModelParams::init(&cfg, 1).unwrap();
        let (c2, p2) = checkpoint_from_json(&checkpoint_to_json(&cfg, &p).unwrap()).unwrap();
        assert_eq!(c2, cfg);
        assert_eq!(p2, p);
    }

    #[test]
    fn rejects_wrong_shapes() {
        let cfg = ModelConfig::with_vocab(7, 9);
        let p = ModelParams::init(&cfg, 1).unwrap();
        let json = checkpoint_to_json(&cfg, &p).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v["config"]["melody_vocab"] = 10.into();
        assert!(matches!(checkpoint_from_json(&v.to_string()), Err(Error::Checkpoint(_))));
    }
}
