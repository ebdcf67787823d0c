//! Run configuration: TOML sections with command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_csv, split, synth_generate, FeatureDataset, SynthSpec};
use crate::error::{DadaError, Result};
use crate::nn::ModelSpec;
use crate::trainer::{EvalSchedule, HyperParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    #[default]
    Synth,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    pub csv_path: Option<PathBuf>,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub synth: SynthSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synth,
            csv_path: None,
            train_fraction: 0.5,
            split_seed: 0,
            synth: SynthSpec::default(),
        }
    }
}

impl DataConfig {
    pub fn load(&self) -> Result<FeatureDataset> {
        match self.source {
            DataSource::Synth => synth_generate(&self.synth),
            DataSource::Csv => {
                let path = self
                    .csv_path
                    .as_ref()
                    .ok_or_else(|| DadaError::config("data.source = \"csv\" needs data.csv_path"))?;
                load_csv(path)
            }
        }
    }

    /// Loads and splits into class-disjoint `(train, test)`.
    pub fn load_split(&self) -> Result<(FeatureDataset, FeatureDataset)> {
        split(&self.load()?, self.train_fraction, self.split_seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Also write `epoch-<n>.ckpt` every this many epochs; 0 writes only
    /// `final.ckpt`.
    pub checkpoint_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelSpec,
    pub hyper: HyperParams,
    pub eval: EvalSchedule,
    pub output: OutputConfig,
}

impl RunConfig {
    /// Parses TOML, applies `key.path=value` overrides in order, validates.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| DadaError::config(format!("invalid config: {}", e.message())))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| DadaError::config(format!("invalid config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| DadaError::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        self.model.validate()?;
        self.data.synth.validate()?;
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return Err(DadaError::config(format!(
                "data.train_fraction must lie in (0, 1), got {}",
                self.data.train_fraction
            )));
        }
        if self.data.source == DataSource::Csv && self.data.csv_path.is_none() {
            return Err(DadaError::config("data.source = \"csv\" needs data.csv_path"));
        }
        let ks = &self.eval.ks;
        if ks.is_empty() || ks[0] == 0 || ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DadaError::config(format!("eval.ks must be positive and strictly ascending, got {ks:?}")));
        }
        Ok(())
    }

    /// A copy with `key.path=value` overrides applied and re-validated.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        Self::from_toml_str(&self.to_toml(), overrides)
    }

    /// The fully resolved configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Sets `a.b.c = value` in `table`. The value is parsed as a TOML value
/// and falls back to a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| DadaError::config(format!("override '{spec}' is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(DadaError::config(format!("override '{spec}' has an empty key segment")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| DadaError::config(format!("override '{spec}': '{p}' is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
