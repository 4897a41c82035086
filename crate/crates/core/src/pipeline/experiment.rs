//! Cross-validated retrieval experiments.
//!
//! * supervised: a retrieval network is trained on the true ratings of a
//!   configuration's two retrieval-training groups;
//! * semi-supervised: a rating regressor is first trained on the two
//!   prediction-training groups (epoch chosen on the next two), and its
//!   predictions label the retrieval-training groups; the matched
//!   supervised run is included for comparison;
//! * imported baseline: externally computed embeddings are evaluated as is.
//!
//! All metrics are computed on the held-out test group against true ratings.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::cv::{cv_config, ConfigRole, CvConfig};
use super::dataset::{id_positions, read_embeddings, Dataset};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::Matrix;
use crate::model::{
    embed_all, train, Embedding, EmbeddingModel, InputKind, ModelConfig, SimilarityLoss,
    TrainSchedule, Validation,
};
use crate::ratings::{set_distance_matrix_with, RatingSet};
use crate::retrieval::{rating_correlation, EmbeddingIndex, HubnessSummary, DEFAULT_K_SET};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Supervised,
    SemiSupervised,
    ImportedBaseline,
}

impl Regime {
    pub const NAMES: [&'static str; 3] = ["supervised", "semi_supervised", "imported_baseline"];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Supervised => "supervised",
            Regime::SemiSupervised => "semi_supervised",
            Regime::ImportedBaseline => "imported_baseline",
        }
    }

    /// Row label in the summary table.
    pub fn label(self) -> &'static str {
        match self {
            Regime::Supervised => "Supervised",
            Regime::SemiSupervised => "Semi-supervised",
            Regime::ImportedBaseline => "Unsupervised",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "supervised" => Ok(Regime::Supervised),
            "semi_supervised" => Ok(Regime::SemiSupervised),
            "imported_baseline" => Ok(Regime::ImportedBaseline),
            other => Err(Error::Config(format!(
                "unknown regime `{other}`; expected one of {}",
                Self::NAMES.join(", ")
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    TrueRatings,
    PredictedRatings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub regime: Regime,
    /// Architecture shared by the regressor and the retrieval network; its
    /// seed is replaced by a per-configuration derived seed.
    pub model: ModelConfig,
    pub prediction: TrainSchedule,
    pub retrieval: TrainSchedule,
    pub configs: Vec<usize>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    pub hubness_k: Vec<usize>,
}

pub const DEFAULT_PREDICTION_EPOCHS: usize = 200;
/// The regressor reads a unit-norm embedding, so its head needs large
/// weights; a higher rate reaches them in a reasonable number of epochs.
pub const DEFAULT_PREDICTION_LEARNING_RATE: f64 = 0.2;
pub const DEFAULT_RETRIEVAL_EPOCHS_PER_STEP: usize = 20;
pub const DEFAULT_RETRIEVAL_LEARNING_RATE: f64 = 0.05;

impl ExperimentSpec {
    /// Defaults for a dataset input shape: a 64-wide perceptron (or the
    /// default conv stack) with 128-d embeddings, regression-only step 1 and a
    /// multi-task `dm_kl` retrieval schedule, on the test-role configurations.
    pub fn defaults(regime: Regime, input: &InputKind, seed: u64) -> Self {
        let model = match *input {
            InputKind::FeatureVector { dim } => ModelConfig::features(dim, vec![64], 128, seed),
            InputKind::ImagePatch { height, width } => ModelConfig {
                input: InputKind::ImagePatch { height, width },
                ..ModelConfig::patch_default(seed)
            },
        };
        let mut prediction = TrainSchedule::regression_only(DEFAULT_PREDICTION_EPOCHS);
        prediction.learning_rate = DEFAULT_PREDICTION_LEARNING_RATE;
        let mut retrieval =
            TrainSchedule::multi_task(SimilarityLoss::DmKl, DEFAULT_RETRIEVAL_EPOCHS_PER_STEP);
        retrieval.learning_rate = DEFAULT_RETRIEVAL_LEARNING_RATE;
        ExperimentSpec {
            regime,
            model,
            prediction,
            retrieval,
            configs: super::cv::configs_with_role(ConfigRole::Test),
            seed,
            embeddings: None,
            hubness_k: DEFAULT_K_SET.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.prediction.validate()?;
        self.retrieval.validate()?;
        if self.prediction.steps.iter().all(|s| s.w_reg == 0.0) {
            return Err(Error::Config(
                "the prediction schedule never trains the rating head".into(),
            ));
        }
        if self.configs.is_empty() {
            return Err(Error::Config("no configuration selected".into()));
        }
        for &c in &self.configs {
            cv_config(c)?;
        }
        if self.hubness_k.is_empty() || self.hubness_k.contains(&0) {
            return Err(Error::Config(
                "hubness k set must be non-empty and positive".into(),
            ));
        }
        if self.regime == Regime::ImportedBaseline && self.embeddings.is_none() {
            return Err(Error::Config(
                "the imported baseline needs an embeddings file".into(),
            ));
        }
        Ok(())
    }

    fn model_for(&self, seed: u64) -> Result<EmbeddingModel> {
        EmbeddingModel::init(ModelConfig {
            seed,
            ..self.model.clone()
        })
    }
}

/// Seed of one training stage of one configuration.
pub fn derive_seed(base: u64, config_id: usize, stage: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base
        .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(1 + ((config_id as u64) << 8 | stage)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const STAGE_PREDICTION: u64 = 1;
const STAGE_RETRIEVAL: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub n_items: usize,
    pub correlation: f64,
    pub hubness: f64,
    pub per_k: HubnessSummary,
}

/// Correlation with true rating distances and hubness of unit-norm
/// embeddings.
pub fn evaluate_embeddings(
    ids: Vec<String>,
    embeddings: &Matrix,
    truth: &[RatingSet],
    k_set: &[usize],
    exec: Execution,
) -> Result<EvalMetrics> {
    if truth.len() != embeddings.rows() {
        return Err(Error::shape(truth.len(), embeddings.rows()));
    }
    let index = EmbeddingIndex::new(
        ids,
        (0..embeddings.rows())
            .map(|i| embeddings.row(i).to_vec())
            .collect(),
    )?;
    let per_k = index.hubness_by_k(k_set, exec)?;
    let rating_dm = set_distance_matrix_with(truth, exec)?;
    Ok(EvalMetrics {
        n_items: index.len(),
        correlation: rating_correlation(&index.distance_matrix(), &rating_dm)?,
        hubness: per_k.mean_index,
        per_k,
    })
}

fn groups_nonempty(ds: &Dataset, groups: &[usize], what: &str) -> Result<Vec<usize>> {
    for &g in groups {
        if ds.indices_in_groups(&[g]).is_empty() {
            return Err(Error::Domain(format!("{what} group {g} is empty")));
        }
    }
    Ok(ds.indices_in_groups(groups))
}

fn assert_disjoint(ds: &Dataset, train: &[usize], held_out: &[usize]) -> Result<()> {
    let train_ids: HashSet<&str> = train.iter().map(|&i| ds.records[i].id.as_str()).collect();
    if let Some(&i) = held_out
        .iter()
        .find(|&&i| train_ids.contains(ds.records[i].id.as_str()))
    {
        return Err(Error::Domain(format!(
            "held-out item `{}` is also a training item",
            ds.records[i].id
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionOutcome {
    pub config_id: usize,
    /// 0 means the untrained regressor was best.
    pub selected_epoch: usize,
    pub initial_val_loss: f64,
    pub selected_val_loss: f64,
    /// Singleton predicted rating sets of the validation and test groups.
    pub predictions: BTreeMap<String, RatingSet>,
}

/// Step 1: trains the rating regressor and predicts the other three groups'
/// ratings with the parameters of the best validation epoch.
pub fn run_prediction_step(
    ds: &Dataset,
    cv: &CvConfig,
    spec: &ExperimentSpec,
    exec: Execution,
) -> Result<PredictionOutcome> {
    let train_idx = groups_nonempty(ds, &cv.prediction_train, "prediction training")?;
    let valid_idx = groups_nonempty(ds, &cv.prediction_valid, "prediction validation")?;
    let test_idx = ds.indices_in_groups(&[cv.test]);
    assert_disjoint(ds, &train_idx, &valid_idx)?;
    assert_disjoint(ds, &train_idx, &test_idx)?;

    let seed = derive_seed(spec.seed, cv.id, STAGE_PREDICTION);
    let mut model = spec.model_for(seed)?;
    let schedule = TrainSchedule {
        seed,
        ..spec.prediction.clone()
    };
    let valid_inputs = ds.inputs(&valid_idx);
    let valid_ratings = ds.rating_sets(&valid_idx);
    let outcome = train(
        &mut model,
        &ds.inputs(&train_idx),
        &ds.rating_sets(&train_idx),
        &schedule,
        Some(Validation {
            inputs: &valid_inputs,
            ratings: &valid_ratings,
            rating_distances: None,
        }),
        exec,
    )?;
    let selected_epoch = outcome.best_epoch.unwrap_or(schedule.total_epochs());
    if let Some(p) = outcome.best_params {
        model.params_mut().copy_from_slice(&p);
    }
    let initial_val_loss = outcome.initial_val_regression_loss.unwrap_or(f64::NAN);
    let selected_val_loss = if selected_epoch == 0 {
        initial_val_loss
    } else {
        outcome.history[selected_epoch - 1]
            .val_regression_loss
            .unwrap_or(f64::NAN)
    };
    log::info!(
        "config {}: regressor epoch {selected_epoch} selected (validation loss {initial_val_loss:.4} -> {selected_val_loss:.4})",
        cv.id
    );

    let targets: Vec<usize> = valid_idx.iter().chain(&test_idx).copied().collect();
    let predicted = model.predict_ratings(&ds.inputs(&targets), &ds.schema)?;
    let predictions = targets
        .iter()
        .zip(predicted)
        .map(|(&i, p)| (ds.records[i].id.clone(), RatingSet::singleton(p)))
        .collect();
    Ok(PredictionOutcome {
        config_id: cv.id,
        selected_epoch,
        initial_val_loss,
        selected_val_loss,
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalOutcome {
    pub config_id: usize,
    pub label_source: LabelSource,
    pub metrics: EvalMetrics,
    pub test_ids: Vec<String>,
    /// Test-group embeddings, one row per `test_ids` entry.
    pub embeddings: Matrix,
    pub epochs: usize,
}

/// Steps 2 and 3: trains the retrieval network on the retrieval-training
/// groups labelled by `label_source` and evaluates the test group.
/// Predicted labels come from `predictions`, or else from the records.
pub fn run_retrieval_step(
    ds: &Dataset,
    cv: &CvConfig,
    spec: &ExperimentSpec,
    label_source: LabelSource,
    predictions: Option<&BTreeMap<String, RatingSet>>,
    exec: Execution,
) -> Result<RetrievalOutcome> {
    let train_idx = groups_nonempty(ds, &cv.retrieval_train(), "retrieval training")?;
    let test_idx = groups_nonempty(ds, &[cv.test], "test")?;
    assert_disjoint(ds, &train_idx, &test_idx)?;

    let labels = match label_source {
        LabelSource::TrueRatings => ds.rating_sets(&train_idx),
        LabelSource::PredictedRatings => train_idx
            .iter()
            .map(|&i| {
                let r = &ds.records[i];
                predictions
                    .and_then(|p| p.get(&r.id))
                    .or(r.predicted_rating_set.as_ref())
                    .cloned()
                    .ok_or_else(|| {
                        Error::Domain(format!(
                            "no predicted ratings for `{}`; run the prediction step first",
                            r.id
                        ))
                    })
            })
            .collect::<Result<Vec<_>>>()?,
    };

    let seed = derive_seed(spec.seed, cv.id, STAGE_RETRIEVAL);
    let mut model = spec.model_for(seed)?;
    let schedule = TrainSchedule {
        seed,
        ..spec.retrieval.clone()
    };
    train(
        &mut model,
        &ds.inputs(&train_idx),
        &labels,
        &schedule,
        None,
        exec,
    )?;
    evaluate_model(
        ds,
        &model,
        cv,
        spec,
        label_source,
        schedule.total_epochs(),
        exec,
    )
}

/// Test-group metrics of the untrained retrieval network of a configuration
/// (same initialization as the trained runs).
pub fn evaluate_untrained(
    ds: &Dataset,
    cv: &CvConfig,
    spec: &ExperimentSpec,
    exec: Execution,
) -> Result<EvalMetrics> {
    let model = spec.model_for(derive_seed(spec.seed, cv.id, STAGE_RETRIEVAL))?;
    Ok(evaluate_model(ds, &model, cv, spec, LabelSource::TrueRatings, 0, exec)?.metrics)
}

fn evaluate_model(
    ds: &Dataset,
    model: &EmbeddingModel,
    cv: &CvConfig,
    spec: &ExperimentSpec,
    label_source: LabelSource,
    epochs: usize,
    exec: Execution,
) -> Result<RetrievalOutcome> {
    let test_idx = ds.indices_in_groups(&[cv.test]);
    let test_ids = ds.ids(&test_idx);
    let embeddings = embed_all(model, &ds.inputs(&test_idx), exec)?;
    let metrics = evaluate_embeddings(
        test_ids.clone(),
        &embeddings,
        &ds.rating_sets(&test_idx),
        &spec.hubness_k,
        exec,
    )?;
    Ok(RetrievalOutcome {
        config_id: cv.id,
        label_source,
        metrics,
        test_ids,
        embeddings,
        epochs,
    })
}

/// Imported embeddings, L2-normalized and joined to dataset positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportedEmbeddings {
    pub positions: Vec<usize>,
    pub vectors: Matrix,
}

impl ImportedEmbeddings {
    /// Rows for the given dataset positions; every position must be present.
    pub fn select(&self, ds: &Dataset, idx: &[usize]) -> Result<Matrix> {
        let row_of: HashMap<usize, usize> = self
            .positions
            .iter()
            .enumerate()
            .map(|(r, &p)| (p, r))
            .collect();
        let rows = idx
            .iter()
            .map(|p| {
                row_of
                    .get(p)
                    .map(|&r| self.vectors.row(r).to_vec())
                    .ok_or_else(|| {
                        Error::Format(format!("no imported embedding for `{}`", ds.records[*p].id))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Matrix::from_rows(&rows)
    }
}

pub fn load_embeddings(ds: &Dataset, path: &Path) -> Result<ImportedEmbeddings> {
    let pairs = read_embeddings(path)?;
    let lookup = id_positions(ds);
    let mut positions = Vec::with_capacity(pairs.len());
    let mut rows = Vec::with_capacity(pairs.len());
    for (id, v) in pairs {
        let &pos = lookup
            .get(id.as_str())
            .ok_or_else(|| Error::Format(format!("embedding id `{id}` is not in the dataset")))?;
        positions.push(pos);
        rows.push(Embedding::normalize(v)?.into_inner());
    }
    Ok(ImportedEmbeddings {
        positions,
        vectors: Matrix::from_rows(&rows)?,
    })
}

/// Normalizes external embeddings and evaluates every embedded item against
/// its true ratings.
pub fn import_embeddings(
    ds: &Dataset,
    path: &Path,
    k_set: &[usize],
    exec: Execution,
) -> Result<(EmbeddingIndex, EvalMetrics)> {
    let imported = load_embeddings(ds, path)?;
    let ids = ds.ids(&imported.positions);
    let metrics = evaluate_embeddings(
        ids.clone(),
        &imported.vectors,
        &ds.rating_sets(&imported.positions),
        k_set,
        exec,
    )?;
    let index = EmbeddingIndex::new(
        ids,
        (0..imported.vectors.rows())
            .map(|i| imported.vectors.row(i).to_vec())
            .collect(),
    )?;
    Ok((index, metrics))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigResult {
    pub config_id: usize,
    pub role: ConfigRole,
    pub regime: Regime,
    pub correlation: f64,
    pub hubness: f64,
    /// Selected regressor epoch (semi-supervised), retrieval training epochs
    /// (supervised) or 0 (imported).
    pub epoch: usize,
}

fn run_config(
    ds: &Dataset,
    cv: &CvConfig,
    spec: &ExperimentSpec,
    imported: Option<&ImportedEmbeddings>,
    exec: Execution,
) -> Result<Vec<ConfigResult>> {
    let row = |regime, m: &EvalMetrics, epoch| ConfigResult {
        config_id: cv.id,
        role: cv.role,
        regime,
        correlation: m.correlation,
        hubness: m.hubness,
        epoch,
    };
    let mut rows = Vec::new();
    match spec.regime {
        Regime::Supervised | Regime::SemiSupervised => {
            let sup = run_retrieval_step(ds, cv, spec, LabelSource::TrueRatings, None, exec)?;
            rows.push(row(Regime::Supervised, &sup.metrics, sup.epochs));
            if spec.regime == Regime::SemiSupervised {
                let pred = run_prediction_step(ds, cv, spec, exec)?;
                let semi = run_retrieval_step(
                    ds,
                    cv,
                    spec,
                    LabelSource::PredictedRatings,
                    Some(&pred.predictions),
                    exec,
                )?;
                rows.push(row(
                    Regime::SemiSupervised,
                    &semi.metrics,
                    pred.selected_epoch,
                ));
            }
        }
        Regime::ImportedBaseline => {
            let imported = imported.expect("validated");
            let test_idx = groups_nonempty(ds, &[cv.test], "test")?;
            let m = evaluate_embeddings(
                ds.ids(&test_idx),
                &imported.select(ds, &test_idx)?,
                &ds.rating_sets(&test_idx),
                &spec.hubness_k,
                exec,
            )?;
            rows.push(row(Regime::ImportedBaseline, &m, 0));
        }
    }
    Ok(rows)
}

/// Per-configuration results keyed by configuration id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub rows: BTreeMap<usize, Vec<ConfigResult>>,
}

/// Runs every selected configuration. Configurations run concurrently under
/// `Execution::Parallel`, each trained sequentially; results are keyed by id
/// so scheduling never changes the output.
pub fn run_pipeline(
    ds: &Dataset,
    spec: &ExperimentSpec,
    exec: Execution,
) -> Result<PipelineResult> {
    spec.validate()?;
    let imported = spec
        .embeddings
        .as_deref()
        .filter(|_| spec.regime == Regime::ImportedBaseline)
        .map(|p| load_embeddings(ds, p))
        .transpose()?;
    let configs = spec
        .configs
        .iter()
        .map(|&id| cv_config(id))
        .collect::<Result<Vec<_>>>()?;
    let inner = if configs.len() > 1 {
        Execution::Sequential
    } else {
        exec
    };
    let results = exec.map_slice(&configs, |cv| {
        run_config(ds, cv, spec, imported.as_ref(), inner)
    });
    let mut out = PipelineResult::default();
    for (cv, r) in configs.iter().zip(results) {
        out.rows.insert(cv.id, r?);
    }
    Ok(out)
}

impl PipelineResult {
    pub fn merge(&mut self, other: PipelineResult) {
        for (id, rows) in other.rows {
            let entry = self.rows.entry(id).or_default();
            for r in rows {
                entry.retain(|e| e.regime != r.regime);
                entry.push(r);
            }
            entry.sort_by_key(|r| r.regime);
        }
    }

    pub fn regimes(&self) -> Vec<Regime> {
        let mut v: Vec<Regime> = self.rows.values().flatten().map(|r| r.regime).collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn config_csv(&self, config_id: usize) -> Option<String> {
        let rows = self.rows.get(&config_id)?;
        let mut out = String::from("config_id,regime,correlation,hubness,epoch\n");
        for r in rows {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{}\n",
                r.config_id,
                r.regime.name(),
                r.correlation,
                r.hubness,
                r.epoch
            ));
        }
        Some(out)
    }

    /// One row per configuration, one column pair per regime.
    pub fn summary_by_config_csv(&self) -> String {
        let regimes = self.regimes();
        let mut out = String::from("config_id,role");
        for r in &regimes {
            out.push_str(&format!(",{0}_correlation,{0}_hubness", r.name()));
        }
        out.push('\n');
        for (id, rows) in &self.rows {
            let role = rows.first().map_or("", |r| r.role.as_str());
            out.push_str(&format!("{id},{role}"));
            for reg in &regimes {
                match rows.iter().find(|r| r.regime == *reg) {
                    Some(r) => out.push_str(&format!(",{:.6},{:.6}", r.correlation, r.hubness)),
                    None => out.push_str(",NA,NA"),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Regime means per role plus cost rows relative to the supervised mean.
    pub fn summary_csv(&self) -> Result<String> {
        let mut out = String::from("role,method,correlation,hubness\n");
        for role in [ConfigRole::Validation, ConfigRole::Test] {
            let Ok(summary) = aggregate_results(self, role) else {
                continue;
            };
            for m in &summary.methods {
                out.push_str(&format!(
                    "{},{},{:.4},{:.4}\n",
                    role.as_str(),
                    m.regime.label(),
                    m.correlation,
                    m.hubness
                ));
            }
            for c in summary.costs() {
                out.push_str(&format!(
                    "{},{} cost,{:+.1}%,{:+.1}%\n",
                    role.as_str(),
                    c.regime.label(),
                    c.correlation_pct,
                    c.hubness_pct
                ));
            }
        }
        Ok(out)
    }
}

/// Writes `config_<id>.csv` per configuration, `summary_by_config.csv` and
/// `summary.csv` into `dir`; returns the written paths in that order.
pub fn write_reports(result: &PipelineResult, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<(PathBuf, String)> = result
        .rows
        .keys()
        .map(|&id| {
            (
                dir.join(format!("config_{id}.csv")),
                result.config_csv(id).expect("key exists"),
            )
        })
        .collect();
    files.push((
        dir.join("summary_by_config.csv"),
        result.summary_by_config_csv(),
    ));
    files.push((dir.join("summary.csv"), result.summary_csv()?));
    for (path, text) in &files {
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub regime: Regime,
    pub correlation: f64,
    pub hubness: f64,
    pub configs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cost {
    pub regime: Regime,
    pub correlation_pct: f64,
    pub hubness_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub role: ConfigRole,
    pub methods: Vec<MethodSummary>,
}

impl Summary {
    pub fn method(&self, regime: Regime) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.regime == regime)
    }

    /// Relative change of every non-supervised method against supervised.
    pub fn costs(&self) -> Vec<Cost> {
        let Some(base) = self.method(Regime::Supervised) else {
            return Vec::new();
        };
        self.methods
            .iter()
            .filter(|m| m.regime != Regime::Supervised)
            .map(|m| Cost {
                regime: m.regime,
                correlation_pct: 100.0 * (m.correlation - base.correlation) / base.correlation,
                hubness_pct: 100.0 * (m.hubness - base.hubness) / base.hubness,
            })
            .collect()
    }
}

/// Mean correlation and hubness per regime over the configurations of `role`.
pub fn aggregate_results(result: &PipelineResult, role: ConfigRole) -> Result<Summary> {
    let mut acc: BTreeMap<Regime, (f64, f64, Vec<usize>)> = BTreeMap::new();
    for (id, rows) in &result.rows {
        for r in rows.iter().filter(|r| r.role == role) {
            let e = acc.entry(r.regime).or_default();
            e.0 += r.correlation;
            e.1 += r.hubness;
            e.2.push(*id);
        }
    }
    if acc.is_empty() {
        return Err(Error::Domain(format!(
            "no {} configuration results",
            role.as_str()
        )));
    }
    Ok(Summary {
        role,
        methods: acc
            .into_iter()
            .map(|(regime, (c, h, configs))| MethodSummary {
                regime,
                correlation: c / configs.len() as f64,
                hubness: h / configs.len() as f64,
                configs,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(values: &[(usize, Regime, f64, f64)]) -> PipelineResult {
        let mut r = PipelineResult::default();
        for &(id, regime, c, h) in values {
            r.rows.entry(id).or_default().push(ConfigResult {
                config_id: id,
                role: cv_config(id).unwrap().role,
                regime,
                correlation: c,
                hubness: h,
                epoch: 1,
            });
        }
        r
    }

    #[test]
    fn aggregation_means_and_costs() {
        let r = result(&[
            (2, Regime::Supervised, 0.4, 0.8),
            (5, Regime::Supervised, 0.5, 0.7),
            (2, Regime::SemiSupervised, 0.4, 0.8),
            (5, Regime::SemiSupervised, 0.4, 0.8),
            (0, Regime::Supervised, 0.9, 0.9),
        ]);
        let s = aggregate_results(&r, ConfigRole::Test).unwrap();
        let sup = s.method(Regime::Supervised).unwrap();
        assert!((sup.correlation - 0.45).abs() < 1e-12);
        assert_eq!(sup.configs, vec![2, 5]);
        let cost = &s.costs()[0];
        assert!((cost.correlation_pct - 100.0 * (0.4 - 0.45) / 0.45).abs() < 1e-9);
        let single = aggregate_results(&r, ConfigRole::Validation).unwrap();
        assert_eq!(single.method(Regime::Supervised).unwrap().correlation, 0.9);
        assert!(aggregate_results(
            &result(&[(0, Regime::Supervised, 0.1, 0.1)]),
            ConfigRole::Test
        )
        .is_err());
    }

    #[test]
    fn tables() {
        let r = result(&[
            (2, Regime::Supervised, 0.46, 0.77),
            (2, Regime::SemiSupervised, 0.42, 0.81),
        ]);
        let csv = r.summary_csv().unwrap();
        assert!(csv.contains("test,Semi-supervised cost,-8.7%,+5.2%"));
        assert_eq!(
            r.summary_by_config_csv().lines().nth(1).unwrap(),
            "2,test,0.460000,0.770000,0.420000,0.810000"
        );
        assert_eq!(r.config_csv(2).unwrap().lines().count(), 3);
    }

    #[test]
    fn seeds_differ_per_stage_and_config() {
        let s: HashSet<u64> = (0..10)
            .flat_map(|c| [1, 2].map(|st| derive_seed(7, c, st)))
            .collect();
        assert_eq!(s.len(), 20);
    }

    #[test]
    fn regime_names() {
        for n in Regime::NAMES {
            assert_eq!(Regime::parse(n).unwrap().name(), n);
        }
        assert!(matches!(Regime::parse("x"), Err(Error::Config(_))));
    }
}
