use std::path::PathBuf;

use clap::builder::PossibleValuesParser;
use clap::Args;
use serde::Serialize;

use cbir_core::model::{SimilarityLoss, TrainSchedule};
use cbir_core::pipeline::{
    parse_config_list, run_pipeline, write_reports, ExperimentSpec, PipelineResult, Regime,
};
use cbir_core::{Error, Result};

use super::{load_dataset, Context};
use crate::config::require;

/// Run cross-validated experiments and write per-configuration and summary CSVs.
///
/// Regimes: supervised, semi_supervised, imported_baseline. A comma separated
/// list runs several and merges their rows; semi_supervised always includes
/// the matched supervised run. Writes config_<id>.csv, summary_by_config.csv
/// and summary.csv.
#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Dataset directory or manifest file
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Regimes to run, comma separated: supervised, semi_supervised, imported_baseline [default: semi_supervised]
    #[arg(long)]
    pub regime: Option<String>,
    /// Configuration ids (comma separated) or one of test, validation, all [default: test]
    #[arg(long)]
    pub configs: Option<String>,
    /// JSONL embeddings for the imported_baseline regime
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Similarity loss of the retrieval network [default: dm_kl]
    #[arg(long, value_parser = PossibleValuesParser::new(SimilarityLoss::NAMES))]
    pub loss: Option<String>,
    /// Epochs of the rating regressor [default: 200]
    #[arg(long)]
    pub prediction_epochs: Option<usize>,
    /// Epochs per multi-task step of the retrieval network [default: 20]
    #[arg(long)]
    pub retrieval_epochs: Option<usize>,
    /// Neighborhood sizes of the hubness index, comma separated [default: 3,5,7,11,17]
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
}

#[derive(Debug, Serialize)]
struct Resolved {
    data: PathBuf,
    data_checksum: String,
    regimes: Vec<Regime>,
    specs: Vec<ExperimentSpec>,
}

/// Parses a regime list, dropping `supervised` when `semi_supervised`
/// already produces it.
pub fn parse_regimes(s: &str) -> Result<Vec<Regime>> {
    let mut regimes = s
        .split(',')
        .map(|t| Regime::parse(t.trim()))
        .collect::<Result<Vec<_>>>()?;
    regimes.sort();
    regimes.dedup();
    if regimes.contains(&Regime::SemiSupervised) {
        regimes.retain(|&r| r != Regime::Supervised);
    }
    if regimes.is_empty() {
        return Err(Error::Config("no regime selected".into()));
    }
    Ok(regimes)
}

pub fn run(args: &PipelineArgs, ctx: &Context) -> Result<()> {
    let file = &ctx.file.pipeline;
    let data = require(
        args.data.clone(),
        file.data.clone(),
        "data",
        "pipeline.data",
    )?;
    let regimes = parse_regimes(
        args.regime
            .as_deref()
            .or(file.regime.as_deref())
            .unwrap_or(Regime::SemiSupervised.name()),
    )?;
    let configs = parse_config_list(
        args.configs
            .as_deref()
            .or(file.configs.as_deref())
            .unwrap_or("test"),
    )?;
    let loss = args
        .loss
        .as_deref()
        .or(file.loss.as_deref())
        .map(SimilarityLoss::parse)
        .transpose()?;
    let embeddings = args.embeddings.clone().or(file.embeddings.clone());
    let seed = ctx.seed();

    let ds = load_dataset(&data)?;
    let input = ds.input_kind()?;
    let specs = regimes
        .iter()
        .map(|&regime| {
            let mut spec = ExperimentSpec::defaults(regime, &input, seed);
            spec.configs = configs.clone();
            spec.embeddings = embeddings.clone();
            if let Some(e) = args.prediction_epochs.or(file.prediction_epochs) {
                spec.prediction = TrainSchedule {
                    learning_rate: file
                        .prediction_learning_rate
                        .unwrap_or(spec.prediction.learning_rate),
                    ..TrainSchedule::regression_only(e)
                };
            } else if let Some(lr) = file.prediction_learning_rate {
                spec.prediction.learning_rate = lr;
            }
            let sim = loss.unwrap_or(spec.retrieval.similarity_loss);
            let per_step = args
                .retrieval_epochs
                .or(file.retrieval_epochs)
                .unwrap_or(spec.retrieval.steps[0].epochs);
            spec.retrieval = TrainSchedule {
                learning_rate: file
                    .retrieval_learning_rate
                    .unwrap_or(spec.retrieval.learning_rate),
                ..TrainSchedule::multi_task(sim, per_step)
            };
            if let Some(b) = file.batch_size {
                spec.prediction.batch_size = b;
                spec.retrieval.batch_size = b;
            }
            if let Some(h) = file.hidden.clone() {
                spec.model.hidden = h;
            }
            if let Some(d) = file.embedding_dim {
                spec.model.embedding_dim = d;
            }
            if let Some(k) = args.k.clone().or(file.k.clone()) {
                spec.hubness_k = k;
            }
            spec.validate()?;
            Ok(spec)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut result = PipelineResult::default();
    for spec in &specs {
        log::info!(
            "running {} on configurations {:?}",
            spec.regime.name(),
            spec.configs
        );
        result.merge(run_pipeline(&ds, spec, ctx.exec)?);
    }
    let out = ctx.out_dir()?;
    let written = write_reports(&result, &out)?;
    let resolved = Resolved {
        data,
        data_checksum: format!("{:016x}", ds.checksum()),
        regimes,
        specs,
    };
    ctx.write_manifest("pipeline", seed, &out, &resolved)?;
    print!("{}", result.summary_csv()?);
    log::info!("wrote {} report files to {}", written.len(), out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn semi_supervised_subsumes_supervised() {
        assert_eq!(
            parse_regimes("supervised, semi_supervised").unwrap(),
            vec![Regime::SemiSupervised]
        );
        assert_eq!(
            parse_regimes("imported_baseline,supervised").unwrap(),
            vec![Regime::Supervised, Regime::ImportedBaseline]
        );
    }

    #[test]
    fn unknown_regime_is_a_usage_error() {
        let e = parse_regimes("unsupervised").unwrap_err();
        assert_eq!(e.kind(), cbir_core::ErrorKind::Usage);
    }
}
