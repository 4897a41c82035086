//! One module per subcommand plus the helpers they share.

pub mod eval;
pub mod pipeline;
pub mod retrieve;
pub mod synth;
pub mod train;

use std::fs;
use std::path::{Path, PathBuf};

use cbir_core::linalg::Matrix;
use cbir_core::model::{embed_all, read_checkpoint, EmbeddingModel};
use cbir_core::pipeline::{read_dataset, Dataset};
use cbir_core::{Error, Execution, Result};

use serde::Serialize;

use crate::config::{FileConfig, RunManifest};

/// Every name accepted by `--loss`; `regression` trains the rating head only.
pub const LOSS_NAMES: [&str; 6] = [
    "dm_logcosh",
    "dm_pearson",
    "dm_ranked_pearson",
    "dm_kl",
    "siamese",
    "regression",
];

/// Settings shared by every command.
pub struct Context<'a> {
    pub file: &'a FileConfig,
    pub config_path: Option<&'a Path>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub exec: Execution,
    pub args: &'a [String],
}

impl Context<'_> {
    pub fn seed(&self) -> u64 {
        self.seed.or(self.file.seed).unwrap_or(0)
    }

    /// Resolved output directory, created if missing.
    pub fn out_dir(&self) -> Result<PathBuf> {
        let out = crate::config::require(self.out.clone(), self.file.out.clone(), "out", "out")?;
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok(out)
    }

    pub fn write_manifest<T: Serialize>(
        &self,
        command: &'static str,
        seed: u64,
        out: &Path,
        resolved: &T,
    ) -> Result<PathBuf> {
        RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            args: self.args,
            config_file: self.config_path,
            seed,
            out,
            resolved,
        }
        .write()
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let ds = read_dataset(path)?;
    log::info!("loaded {} items from {}", ds.len(), path.display());
    Ok(ds)
}

/// Dataset positions in `groups`, or every item when no groups are given.
pub fn select_items(ds: &Dataset, groups: Option<&[usize]>) -> Result<Vec<usize>> {
    let idx = match groups {
        Some(g) => ds.indices_in_groups(g),
        None => (0..ds.len()).collect(),
    };
    if idx.is_empty() {
        return Err(Error::Domain("no items in the selected groups".into()));
    }
    Ok(idx)
}

pub fn load_model(path: &Path, ds: &Dataset) -> Result<EmbeddingModel> {
    let model = read_checkpoint(path)?;
    let kind = ds.input_kind()?;
    if model.config().input != kind {
        return Err(Error::shape(
            format!("{kind:?} inputs"),
            format!("{:?} model input", model.config().input),
        ));
    }
    Ok(model)
}

pub fn embed_items(
    model: &EmbeddingModel,
    ds: &Dataset,
    idx: &[usize],
    exec: Execution,
) -> Result<Matrix> {
    embed_all(model, &ds.inputs(idx), exec)
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("NA".to_string(), |x| format!("{x:.6}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use cbir_core::model::SimilarityLoss;

    #[test]
    fn loss_names_cover_every_similarity_loss() {
        assert_eq!(&LOSS_NAMES[..5], &SimilarityLoss::NAMES[..]);
        assert_eq!(LOSS_NAMES[5], "regression");
    }
}
