//! Optional TOML run configuration and the per-run manifest.
//!
//! Precedence, highest first: command-line flags, the `--config` file,
//! built-in defaults. Top-level keys (`seed`, `out`, `jobs`) apply to every
//! command; each command also reads its own table, e.g. `[train]`.

use std::fs;
use std::path::{Path, PathBuf};

use cbir_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub synth: SynthSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub retrieve: RetrieveSection,
    pub pipeline: PipelineSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n: Option<usize>,
    pub noiseless: Option<bool>,
    pub feature_dim: Option<usize>,
    pub rater_std: Option<f64>,
    pub max_raters: Option<usize>,
    pub feature_noise: Option<f64>,
    pub nuisance_dims: Option<usize>,
    pub nuisance_scale: Option<f64>,
    pub gain: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub data: Option<PathBuf>,
    pub schedule: Option<String>,
    pub loss: Option<String>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub hidden: Option<Vec<usize>>,
    pub embedding_dim: Option<usize>,
    pub train_groups: Option<Vec<usize>>,
    pub val_groups: Option<Vec<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub k: Option<Vec<usize>>,
    pub hub_k: Option<usize>,
    pub groups: Option<Vec<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrieveSection {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub query_id: Option<String>,
    pub k: Option<usize>,
    pub groups: Option<Vec<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub data: Option<PathBuf>,
    pub regime: Option<String>,
    pub configs: Option<String>,
    pub embeddings: Option<PathBuf>,
    pub loss: Option<String>,
    pub prediction_epochs: Option<usize>,
    pub prediction_learning_rate: Option<f64>,
    pub retrieval_epochs: Option<usize>,
    pub retrieval_learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub hidden: Option<Vec<usize>>,
    pub embedding_dim: Option<usize>,
    pub k: Option<Vec<usize>>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Flag value, else file value, else an error naming both spellings.
pub fn require<T>(flag: Option<T>, file: Option<T>, flag_name: &str, file_key: &str) -> Result<T> {
    flag.or(file).ok_or_else(|| {
        Error::Config(format!(
            "missing --{flag_name} (or `{file_key}` in the config file)"
        ))
    })
}

/// Everything needed to rerun a command: the arguments, the config file, the
/// seed and every resolved setting.
#[derive(Debug, Serialize)]
pub struct RunManifest<'a, T: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub args: &'a [String],
    pub config_file: Option<&'a Path>,
    pub seed: u64,
    pub out: &'a Path,
    pub resolved: &'a T,
}

impl<T: Serialize> RunManifest<'_, T> {
    pub fn write(&self) -> Result<PathBuf> {
        let path = self.out.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
