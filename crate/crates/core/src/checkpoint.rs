//! Checkpoints: the resolved config plus the complete trainer state as JSON.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{DadaError, Result};
use crate::trainer::Trainer;

pub const FORMAT: &str = "dada-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: RunConfig,
    pub trainer: Trainer,
}

impl Checkpoint {
    pub fn new(config: RunConfig, trainer: Trainer) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            config,
            trainer,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|e| DadaError::numeric(format!("checkpoint encode: {e}")))?;
        fs::write(path, text).map_err(|e| DadaError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| DadaError::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| DadaError::config(format!("{} is not a valid checkpoint: {e}", path.display())))?;
        if ckpt.format != FORMAT || ckpt.version != VERSION {
            return Err(DadaError::config(format!(
                "{}: unsupported checkpoint {} v{}",
                path.display(),
                ckpt.format,
                ckpt.version
            )));
        }
        Ok(ckpt)
    }
}
