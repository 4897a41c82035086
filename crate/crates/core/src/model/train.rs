//! Mini-batch training loop for the regression, similarity and multi-task
//! network configurations.
//!
//! Each batch embeds its items, builds the embedding distance matrix `P` and
//! the rating-set distance matrix `T` of the same items, and combines the
//! per-item rating regression with the batch similarity loss using the
//! weights of the current schedule step.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EmbeddingModel, ForwardCache, ModelInput};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::Matrix;
use crate::losses::{
    dm_kl_with, dm_logcosh, dm_pearson, dm_ranked_pearson, logcosh_regression, multi_task_combine,
    pairwise_distances, pairwise_distances_backward, siamese_distance_loss, LossResult,
    SoftmaxSign,
};
use crate::ratings::{mean_rating, set_distance_matrix_with, DistanceMatrix, RatingSet};
use crate::retrieval::rating_correlation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    RegressionOnly,
    SimilarityOnly,
    TwoStepFinetune,
    MultiTask,
}

impl ScheduleMode {
    pub const NAMES: [&'static str; 4] = [
        "regression_only",
        "similarity_only",
        "two_step_finetune",
        "multi_task",
    ];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "regression_only" => Ok(ScheduleMode::RegressionOnly),
            "similarity_only" => Ok(ScheduleMode::SimilarityOnly),
            "two_step_finetune" => Ok(ScheduleMode::TwoStepFinetune),
            "multi_task" => Ok(ScheduleMode::MultiTask),
            other => Err(Error::Config(format!(
                "unknown schedule `{other}`; expected one of {}",
                Self::NAMES.join(", ")
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityLoss {
    DmLogcosh,
    DmPearson,
    DmRankedPearson,
    DmKl,
    Siamese,
}

impl SimilarityLoss {
    pub const NAMES: [&'static str; 5] = [
        "dm_logcosh",
        "dm_pearson",
        "dm_ranked_pearson",
        "dm_kl",
        "siamese",
    ];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dm_logcosh" => Ok(SimilarityLoss::DmLogcosh),
            "dm_pearson" => Ok(SimilarityLoss::DmPearson),
            "dm_ranked_pearson" => Ok(SimilarityLoss::DmRankedPearson),
            "dm_kl" => Ok(SimilarityLoss::DmKl),
            "siamese" => Ok(SimilarityLoss::Siamese),
            other => Err(Error::Config(format!(
                "unknown loss `{other}`; expected one of {}, regression",
                Self::NAMES.join(", ")
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        Self::NAMES[self as usize]
    }

    fn min_batch(self) -> usize {
        match self {
            SimilarityLoss::DmPearson | SimilarityLoss::DmRankedPearson => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleStep {
    pub w_reg: f64,
    pub w_sim: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub mode: ScheduleMode,
    pub steps: Vec<ScheduleStep>,
    pub similarity_loss: SimilarityLoss,
    pub learning_rate: f64,
    pub batch_size: usize,
    #[serde(default)]
    pub softmax_sign: SoftmaxSign,
    pub seed: u64,
}

pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_LEARNING_RATE: f64 = 0.01;

/// Loss weights (regression, similarity) of the three multi-task steps.
/// The last step's weights intentionally do not sum to one.
pub const MULTI_TASK_WEIGHTS: [(f64, f64); 3] = [(0.9, 0.1), (0.5, 0.5), (0.0, 0.1)];

impl TrainSchedule {
    fn with_steps(mode: ScheduleMode, loss: SimilarityLoss, steps: Vec<ScheduleStep>) -> Self {
        TrainSchedule {
            mode,
            steps,
            similarity_loss: loss,
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: DEFAULT_BATCH_SIZE,
            softmax_sign: SoftmaxSign::Positive,
            seed: 0,
        }
    }

    pub fn regression_only(epochs: usize) -> Self {
        Self::with_steps(
            ScheduleMode::RegressionOnly,
            SimilarityLoss::DmKl,
            vec![ScheduleStep {
                w_reg: 1.0,
                w_sim: 0.0,
                epochs,
            }],
        )
    }

    pub fn similarity_only(loss: SimilarityLoss, epochs: usize) -> Self {
        Self::with_steps(
            ScheduleMode::SimilarityOnly,
            loss,
            vec![ScheduleStep {
                w_reg: 0.0,
                w_sim: 1.0,
                epochs,
            }],
        )
    }

    /// Regression first, then the similarity loss alone.
    pub fn two_step_finetune(loss: SimilarityLoss, epochs_per_step: usize) -> Self {
        Self::with_steps(
            ScheduleMode::TwoStepFinetune,
            loss,
            vec![
                ScheduleStep {
                    w_reg: 1.0,
                    w_sim: 0.0,
                    epochs: epochs_per_step,
                },
                ScheduleStep {
                    w_reg: 0.0,
                    w_sim: 1.0,
                    epochs: epochs_per_step,
                },
            ],
        )
    }

    pub fn multi_task(loss: SimilarityLoss, epochs_per_step: usize) -> Self {
        let steps = MULTI_TASK_WEIGHTS
            .iter()
            .map(|&(w_reg, w_sim)| ScheduleStep {
                w_reg,
                w_sim,
                epochs: epochs_per_step,
            })
            .collect();
        Self::with_steps(ScheduleMode::MultiTask, loss, steps)
    }

    pub fn build(mode: ScheduleMode, loss: SimilarityLoss, epochs: usize) -> Self {
        match mode {
            ScheduleMode::RegressionOnly => Self::regression_only(epochs),
            ScheduleMode::SimilarityOnly => Self::similarity_only(loss, epochs),
            ScheduleMode::TwoStepFinetune => Self::two_step_finetune(loss, epochs),
            ScheduleMode::MultiTask => Self::multi_task(loss, epochs),
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.steps.iter().map(|s| s.epochs).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        for s in &self.steps {
            if !(s.w_reg >= 0.0) || !(s.w_sim >= 0.0) {
                return Err(Error::Config("schedule weights must be nonnegative".into()));
            }
        }
        Ok(())
    }
}

/// Held-out data monitored after every epoch.
#[derive(Debug, Clone, Copy)]
pub struct Validation<'a> {
    pub inputs: &'a [ModelInput],
    pub ratings: &'a [RatingSet],
    /// Rating-set distance matrix of `ratings`; only needed for the
    /// correlation column.
    pub rating_distances: Option<&'a DistanceMatrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based global epoch index.
    pub epoch: usize,
    pub step: usize,
    pub w_reg: f64,
    pub w_sim: f64,
    pub train_loss: f64,
    pub skipped_batches: usize,
    pub val_regression_loss: Option<f64>,
    pub val_correlation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// Validation regression loss before the first update, when validation
    /// data was supplied.
    pub initial_val_regression_loss: Option<f64>,
    /// Epoch (0 = untrained) with the lowest validation regression loss.
    pub best_epoch: Option<usize>,
    /// Parameters at `best_epoch`.
    pub best_params: Option<Vec<f64>>,
}

pub fn embed_all(model: &EmbeddingModel, inputs: &[ModelInput], exec: Execution) -> Result<Matrix> {
    let rows = exec
        .map_slice(inputs, |x| model.forward(x).map(|e| e.into_inner()))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_rows(&rows)
}

fn regression_loss(
    model: &EmbeddingModel,
    inputs: &[ModelInput],
    ratings: &[RatingSet],
    exec: Execution,
) -> Result<f64> {
    let preds = exec
        .map_slice(inputs, |x| {
            model.forward(x).map(|e| model.rating_head(&e).into_inner())
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let targets = ratings
        .iter()
        .map(|s| mean_rating(s).map(|r| r.into_inner()))
        .collect::<Result<Vec<_>>>()?;
    Ok(logcosh_regression(&Matrix::from_rows(&preds)?, &Matrix::from_rows(&targets)?)?.value)
}

/// Splits a shuffled order into batches; a trailing remainder smaller than
/// `min` is folded into the previous batch.
fn batches(order: &[usize], size: usize, min: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < min) {
        let n = out.len();
        let start = (n - 2) * size;
        out.truncate(n - 2);
        out.push(&order[start..]);
    }
    out
}

struct BatchOutcome {
    value: f64,
    grad: Vec<f64>,
}

fn similarity_gradient(
    loss: SimilarityLoss,
    sign: SoftmaxSign,
    e: &Matrix,
    t: &DistanceMatrix,
) -> Result<LossResult> {
    let t = t.as_matrix();
    if loss == SimilarityLoss::Siamese {
        // consecutive items form the pairs
        let pairs = e.rows() / 2;
        let a = Matrix::from_rows(
            &(0..pairs)
                .map(|k| e.row(2 * k).to_vec())
                .collect::<Vec<_>>(),
        )?;
        let b = Matrix::from_rows(
            &(0..pairs)
                .map(|k| e.row(2 * k + 1).to_vec())
                .collect::<Vec<_>>(),
        )?;
        let d: Vec<f64> = (0..pairs).map(|k| t[(2 * k, 2 * k + 1)]).collect();
        let r = siamese_distance_loss(&a, &b, &d)?;
        let mut grad = Matrix::zeros(e.rows(), e.cols());
        for k in 0..pairs {
            grad.row_mut(2 * k).copy_from_slice(r.gradient.row(k));
            grad.row_mut(2 * k + 1)
                .copy_from_slice(r.gradient.row(pairs + k));
        }
        return Ok(LossResult {
            value: r.value,
            gradient: grad,
        });
    }
    let p = pairwise_distances(e);
    let r = match loss {
        SimilarityLoss::DmLogcosh => dm_logcosh(&p, t)?,
        SimilarityLoss::DmPearson => dm_pearson(&p, t)?,
        SimilarityLoss::DmRankedPearson => dm_ranked_pearson(&p, t)?,
        SimilarityLoss::DmKl => dm_kl_with(&p, t, sign)?,
        SimilarityLoss::Siamese => unreachable!(),
    };
    Ok(LossResult {
        value: r.value,
        gradient: pairwise_distances_backward(e, &p, &r.gradient),
    })
}

fn batch_step(
    model: &EmbeddingModel,
    inputs: &[ModelInput],
    ratings: &[RatingSet],
    idx: &[usize],
    step: &ScheduleStep,
    schedule: &TrainSchedule,
    exec: Execution,
) -> Result<BatchOutcome> {
    let caches: Vec<ForwardCache> = exec
        .map_slice(idx, |&i| model.forward_cached(&inputs[i]))
        .into_iter()
        .collect::<Result<_>>()?;
    let e = Matrix::from_rows(
        &caches
            .iter()
            .map(|c| c.embedding().as_slice().to_vec())
            .collect::<Vec<_>>(),
    )?;
    let (b, d) = e.shape();
    let zero = || LossResult {
        value: 0.0,
        gradient: Matrix::zeros(b, d),
    };

    let mut grad_rating: Option<Matrix> = None;
    let reg = if step.w_reg > 0.0 {
        let preds = Matrix::from_rows(
            &caches
                .iter()
                .map(|c| model.rating_head(c.embedding()).into_inner())
                .collect::<Vec<_>>(),
        )?;
        let targets = Matrix::from_rows(
            &idx.iter()
                .map(|&i| mean_rating(&ratings[i]).map(|r| r.into_inner()))
                .collect::<Result<Vec<_>>>()?,
        )?;
        let r = logcosh_regression(&preds, &targets)?;
        grad_rating = Some(r.gradient.scale(step.w_reg));
        // embedding-side gradient of the regression is applied by the
        // head backward pass, so only the value is carried here
        LossResult {
            value: r.value,
            gradient: Matrix::zeros(b, d),
        }
    } else {
        zero()
    };

    let sim = if step.w_sim > 0.0 {
        let sets: Vec<RatingSet> = idx.iter().map(|&i| ratings[i].clone()).collect();
        let t = set_distance_matrix_with(&sets, Execution::Sequential)?;
        similarity_gradient(schedule.similarity_loss, schedule.softmax_sign, &e, &t)?
    } else {
        zero()
    };

    let combined = multi_task_combine(&reg, &sim, step.w_reg, step.w_sim)?;
    let per_item = exec.map_range(b, |k| {
        let mut g = vec![0.0; model.param_count()];
        let gr = grad_rating.as_ref().map(|m| m.row(k));
        model.backward(&caches[k], combined.gradient.row(k), gr, &mut g);
        g
    });
    let mut grad = vec![0.0; model.param_count()];
    for g in per_item {
        for (a, v) in grad.iter_mut().zip(g) {
            *a += v;
        }
    }
    Ok(BatchOutcome {
        value: combined.value,
        grad,
    })
}

/// Trains `model` in place. Batches whose similarity loss is numerically
/// degenerate (e.g. a constant target row) are skipped and counted.
pub fn train(
    model: &mut EmbeddingModel,
    inputs: &[ModelInput],
    ratings: &[RatingSet],
    schedule: &TrainSchedule,
    validation: Option<Validation<'_>>,
    exec: Execution,
) -> Result<TrainOutcome> {
    schedule.validate()?;
    if inputs.len() != ratings.len() {
        return Err(Error::shape(
            format!("{} rating sets", inputs.len()),
            ratings.len(),
        ));
    }
    if inputs.is_empty() {
        return Err(Error::Domain("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = Vec::with_capacity(schedule.total_epochs());

    let initial_val_regression_loss = validation
        .map(|v| regression_loss(model, v.inputs, v.ratings, exec))
        .transpose()?;
    let mut best: Option<(usize, f64, Vec<f64>)> =
        initial_val_regression_loss.map(|l| (0, l, model.params().to_vec()));

    let mut epoch = 0;
    for (step_idx, step) in schedule.steps.iter().enumerate() {
        let min = if step.w_sim > 0.0 {
            schedule.similarity_loss.min_batch()
        } else {
            1
        };
        for _ in 0..step.epochs {
            epoch += 1;
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let mut used = 0usize;
            let mut skipped = 0usize;
            for batch in batches(&order, schedule.batch_size, min) {
                if batch.len() < min {
                    skipped += 1;
                    continue;
                }
                match batch_step(model, inputs, ratings, batch, step, schedule, exec) {
                    Ok(out) => {
                        model.apply_gradient(&out.grad, schedule.learning_rate);
                        total += out.value;
                        used += 1;
                    }
                    Err(Error::DegenerateRow { row }) => {
                        log::warn!("epoch {epoch}: skipping batch with degenerate row {row}");
                        skipped += 1;
                    }
                    Err(Error::Degenerate(msg)) => {
                        log::warn!("epoch {epoch}: skipping degenerate batch: {msg}");
                        skipped += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
            let (val_regression_loss, val_correlation) = match validation {
                Some(v) => {
                    let reg = regression_loss(model, v.inputs, v.ratings, exec)?;
                    let corr = match v.rating_distances {
                        Some(t) if v.inputs.len() >= 3 => {
                            let e = embed_all(model, v.inputs, exec)?;
                            let p = DistanceMatrix::new(pairwise_distances(&e))?;
                            rating_correlation(&p, t).ok()
                        }
                        _ => None,
                    };
                    (Some(reg), corr)
                }
                None => (None, None),
            };
            if let Some(l) = val_regression_loss {
                if best.as_ref().is_none_or(|(_, b, _)| l < *b) {
                    best = Some((epoch, l, model.params().to_vec()));
                }
            }
            history.push(EpochRecord {
                epoch,
                step: step_idx,
                w_reg: step.w_reg,
                w_sim: step.w_sim,
                train_loss: if used > 0 {
                    total / used as f64
                } else {
                    f64::NAN
                },
                skipped_batches: skipped,
                val_regression_loss,
                val_correlation,
            });
        }
    }
    let (best_epoch, best_params) = match best {
        Some((e, _, p)) => (Some(e), Some(p)),
        None => (None, None),
    };
    Ok(TrainOutcome {
        history,
        initial_val_regression_loss,
        best_epoch,
        best_params,
    })
}
