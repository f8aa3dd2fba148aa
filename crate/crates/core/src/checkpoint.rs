//! JSON checkpoints: the model config plus every named parameter tensor.
//! Floats are written with round-trip precision, so save/load is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};

pub const FORMAT: &str = "puda-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: ModelConfig,
    tensors: Vec<NamedTensor>,
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let file = CheckpointFile {
        format: FORMAT.into(),
        version: VERSION,
        config: *params.config(),
        tensors: params
            .named()
            .map(|(name, t)| NamedTensor {
                name: name.into(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect(),
    };
    fs::write(path, serde_json::to_vec(&file)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path)?;
    let file: CheckpointFile = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if file.format != FORMAT || file.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported format {} v{}",
            path.display(),
            file.format,
            file.version
        )));
    }
    let named = file
        .tensors
        .into_iter()
        .map(|t| Ok((t.name, Tensor::new(t.shape, t.data)?)))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    ModelParams::from_named(file.config, named).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

/// Loads and checks the stored config against `expected`.
pub fn load_checkpoint_expecting(path: &Path, expected: &ModelConfig) -> Result<ModelParams> {
    let params = load_checkpoint(path)?;
    let got = params.config();
    if got != expected {
        return Err(Error::Checkpoint(format!(
            "{}: checkpoint config {got:?} does not match expected {expected:?}",
            path.display()
        )));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 20,
            dim: 8,
            labels: 3,
            max_len: 6,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mut p = ModelParams::init(cfg(), 3).unwrap();
        p.tensors_mut()[0].data_mut()[0] = 0.1 + 0.2;
        p.tensors_mut()[0].data_mut()[1] = -1e-300;
        save_checkpoint(&p, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), p);
    }

    #[test]
    fn rejects_mismatch_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_checkpoint(&ModelParams::init(cfg(), 3).unwrap(), &path).unwrap();
        let other = ModelConfig { labels: 4, ..cfg() };
        assert!(load_checkpoint_expecting(&path, &other).is_err());

        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    }
}
