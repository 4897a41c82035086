use std::path::PathBuf;

use clap::builder::PossibleValuesParser;
use clap::Args;
use serde::Serialize;

use cbir_core::model::{
    embed_all, train, write_checkpoint, EmbeddingModel, ModelConfig, ScheduleMode, SimilarityLoss,
    TrainSchedule, Validation,
};
use cbir_core::pipeline::{
    derive_seed, ExperimentSpec, Regime, DEFAULT_PREDICTION_EPOCHS,
    DEFAULT_PREDICTION_LEARNING_RATE, DEFAULT_RETRIEVAL_EPOCHS_PER_STEP,
    DEFAULT_RETRIEVAL_LEARNING_RATE,
};
use cbir_core::ratings::{set_distance_matrix_with, DistanceMatrix};
use cbir_core::retrieval::rating_correlation;
use cbir_core::{Error, Execution, Result};

use super::{fmt_opt, load_dataset, write_text, Context, LOSS_NAMES};
use crate::config::require;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const DEFAULT_TRAIN_GROUPS: [usize; 4] = [0, 1, 2, 3];
pub const DEFAULT_VAL_GROUPS: [usize; 1] = [4];

/// Train an embedding model and write a checkpoint plus per-epoch history.
#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory or manifest file
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Training schedule [default: multi_task]
    #[arg(long, value_parser = PossibleValuesParser::new(ScheduleMode::NAMES))]
    pub schedule: Option<String>,
    /// Similarity loss; `regression` implies the regression_only schedule [default: dm_kl]
    #[arg(long, value_parser = PossibleValuesParser::new(LOSS_NAMES))]
    pub loss: Option<String>,
    /// Epochs per schedule step [default: 200 for regression_only, else 20]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// SGD step size [default: 0.2 for regression_only, else 0.05]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Mini-batch size [default: 32]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Hidden widths, comma separated (conv channels for image patches)
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Embedding dimension [default: 128]
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    /// Groups used for training [default: 0,1,2,3]
    #[arg(long, value_delimiter = ',')]
    pub train_groups: Option<Vec<usize>>,
    /// Groups monitored after every epoch [default: 4]
    #[arg(long, value_delimiter = ',')]
    pub val_groups: Option<Vec<usize>>,
}

#[derive(Debug, Serialize)]
struct Resolved {
    data: PathBuf,
    data_checksum: String,
    loss: String,
    model: ModelConfig,
    schedule: TrainSchedule,
    train_groups: Vec<usize>,
    val_groups: Vec<usize>,
}

/// Builds the schedule named by `loss` and `schedule`, with the default
/// epochs and step size of that kind of schedule.
pub fn resolve_schedule(
    loss: &str,
    schedule: Option<&str>,
    epochs: Option<usize>,
    learning_rate: Option<f64>,
) -> Result<TrainSchedule> {
    let (mode, sim) = if loss == "regression" {
        match schedule.map(ScheduleMode::parse).transpose()? {
            None | Some(ScheduleMode::RegressionOnly) => {}
            Some(_) => {
                return Err(Error::Config(
                    "loss `regression` only combines with the regression_only schedule".into(),
                ))
            }
        }
        (ScheduleMode::RegressionOnly, SimilarityLoss::DmKl)
    } else {
        let sim = SimilarityLoss::parse(loss)?;
        (ScheduleMode::parse(schedule.unwrap_or("multi_task"))?, sim)
    };
    let (default_epochs, default_lr) = match mode {
        ScheduleMode::RegressionOnly => {
            (DEFAULT_PREDICTION_EPOCHS, DEFAULT_PREDICTION_LEARNING_RATE)
        }
        _ => (
            DEFAULT_RETRIEVAL_EPOCHS_PER_STEP,
            DEFAULT_RETRIEVAL_LEARNING_RATE,
        ),
    };
    let mut s = TrainSchedule::build(mode, sim, epochs.unwrap_or(default_epochs));
    s.learning_rate = learning_rate.unwrap_or(default_lr);
    Ok(s)
}

fn validation_correlation(
    model: &EmbeddingModel,
    val: &Validation<'_>,
    exec: Execution,
) -> Result<Option<f64>> {
    let Some(rating_dm) = val.rating_distances else {
        return Ok(None);
    };
    let emb = embed_all(model, val.inputs, exec)?;
    let rows: Vec<Vec<f64>> = (0..emb.rows()).map(|i| emb.row(i).to_vec()).collect();
    let dm = DistanceMatrix::from_points(&rows);
    Ok(rating_correlation(&dm, rating_dm).ok())
}

pub fn run(args: &TrainArgs, ctx: &Context) -> Result<()> {
    let file = &ctx.file.train;
    let data = require(args.data.clone(), file.data.clone(), "data", "train.data")?;
    let loss = args
        .loss
        .clone()
        .or(file.loss.clone())
        .unwrap_or_else(|| "dm_kl".into());
    if !LOSS_NAMES.contains(&loss.as_str()) {
        return Err(Error::Config(format!(
            "unknown loss `{loss}`; expected one of {}",
            LOSS_NAMES.join(", ")
        )));
    }
    let seed = ctx.seed();
    let mut schedule = resolve_schedule(
        &loss,
        args.schedule.as_deref().or(file.schedule.as_deref()),
        args.epochs.or(file.epochs),
        args.learning_rate.or(file.learning_rate),
    )?;
    if let Some(b) = args.batch_size.or(file.batch_size) {
        schedule.batch_size = b;
    }
    schedule.seed = derive_seed(seed, 0, 2);
    schedule.validate()?;

    let train_groups = args
        .train_groups
        .clone()
        .or(file.train_groups.clone())
        .unwrap_or_else(|| DEFAULT_TRAIN_GROUPS.to_vec());
    let val_groups = args
        .val_groups
        .clone()
        .or(file.val_groups.clone())
        .unwrap_or_else(|| DEFAULT_VAL_GROUPS.to_vec());
    if let Some(g) = train_groups.iter().find(|g| val_groups.contains(g)) {
        return Err(Error::Config(format!(
            "group {g} is both a training and a validation group"
        )));
    }

    let ds = load_dataset(&data)?;
    let mut model_config = ExperimentSpec::defaults(
        Regime::Supervised,
        &ds.input_kind()?,
        derive_seed(seed, 0, 1),
    )
    .model;
    if let Some(h) = args.hidden.clone().or(file.hidden.clone()) {
        model_config.hidden = h;
    }
    if let Some(d) = args.embedding_dim.or(file.embedding_dim) {
        model_config.embedding_dim = d;
    }
    let mut model = EmbeddingModel::init(model_config.clone())?;

    let train_idx = ds.indices_in_groups(&train_groups);
    let val_idx = ds.indices_in_groups(&val_groups);
    if train_idx.is_empty() {
        return Err(Error::Domain("the training groups hold no items".into()));
    }
    let val_inputs = ds.inputs(&val_idx);
    let val_ratings = ds.rating_sets(&val_idx);
    let val_dm = if val_idx.len() >= 3 {
        Some(set_distance_matrix_with(&val_ratings, ctx.exec)?)
    } else {
        None
    };
    let validation = (!val_idx.is_empty()).then_some(Validation {
        inputs: &val_inputs,
        ratings: &val_ratings,
        rating_distances: val_dm.as_ref(),
    });

    let initial_corr = match &validation {
        Some(v) => validation_correlation(&model, v, ctx.exec)?,
        None => None,
    };
    let outcome = train(
        &mut model,
        &ds.inputs(&train_idx),
        &ds.rating_sets(&train_idx),
        &schedule,
        validation,
        ctx.exec,
    )?;

    let out = ctx.out_dir()?;
    write_checkpoint(&model, &out.join(CHECKPOINT_FILE))?;
    let mut history = String::from(
        "epoch,train_loss,val_correlation,step,w_reg,w_sim,val_regression_loss,skipped_batches\n",
    );
    history.push_str(&format!(
        "0,NA,{},NA,NA,NA,{},0\n",
        fmt_opt(initial_corr),
        fmt_opt(outcome.initial_val_regression_loss)
    ));
    for r in &outcome.history {
        history.push_str(&format!(
            "{},{:.6},{},{},{},{},{},{}\n",
            r.epoch,
            r.train_loss,
            fmt_opt(r.val_correlation),
            r.step,
            r.w_reg,
            r.w_sim,
            fmt_opt(r.val_regression_loss),
            r.skipped_batches
        ));
    }
    write_text(&out.join(HISTORY_FILE), &history)?;

    let resolved = Resolved {
        data,
        data_checksum: format!("{:016x}", ds.checksum()),
        loss,
        model: model_config,
        schedule,
        train_groups,
        val_groups,
    };
    ctx.write_manifest("train", seed, &out, &resolved)?;
    println!(
        "trained {} epochs on {} items; checkpoint {}",
        outcome.history.len(),
        train_idx.len(),
        out.join(CHECKPOINT_FILE).display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regression_loss_forces_regression_schedule() {
        let s = resolve_schedule("regression", None, None, None).unwrap();
        assert_eq!(s.mode, ScheduleMode::RegressionOnly);
        assert_eq!(s.total_epochs(), DEFAULT_PREDICTION_EPOCHS);
        assert!(resolve_schedule("regression", Some("multi_task"), None, None).is_err());
    }

    #[test]
    fn multi_task_is_the_default_schedule() {
        let s = resolve_schedule("dm_kl", None, Some(5), Some(0.1)).unwrap();
        assert_eq!(s, {
            let mut t = TrainSchedule::multi_task(SimilarityLoss::DmKl, 5);
            t.learning_rate = 0.1;
            t
        });
    }

    #[test]
    fn unknown_names_are_usage_errors() {
        let e = resolve_schedule("kl", None, None, None).unwrap_err();
        assert_eq!(e.kind(), cbir_core::ErrorKind::Usage);
        let e = resolve_schedule("dm_kl", Some("multitask"), None, None).unwrap_err();
        assert_eq!(e.kind(), cbir_core::ErrorKind::Usage);
    }
}
