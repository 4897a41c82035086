//! Data preparation, synthetic data and cross-validated experiments.

mod cv;
mod dataset;
mod experiment;
mod records;
mod synthetic;

pub use cv::{
    configs_with_role, cv_config, cv_configs, parse_config_list, ConfigRole, CvConfig, CV_CONFIGS,
    N_GROUPS,
};
pub use dataset::{
    classify, id_positions, read_dataset, read_embeddings, split_groups, write_dataset,
    write_embeddings, Dataset, PatchRecord, BLOB_DIR, MANIFEST_FILE, SCHEMA_FILE,
};
pub use experiment::{
    aggregate_results, derive_seed, evaluate_embeddings, evaluate_untrained, import_embeddings,
    load_embeddings, run_pipeline, run_prediction_step, run_retrieval_step, write_reports,
    ConfigResult, Cost, EvalMetrics, ExperimentSpec, ImportedEmbeddings, LabelSource,
    MethodSummary, PipelineResult, PredictionOutcome, Regime, RetrievalOutcome, Summary,
    DEFAULT_PREDICTION_EPOCHS, DEFAULT_PREDICTION_LEARNING_RATE, DEFAULT_RETRIEVAL_EPOCHS_PER_STEP,
    DEFAULT_RETRIEVAL_LEARNING_RATE,
};
pub use records::{normalize_patch, select_representative_slice, AnnotationRecord, HU_WINDOW};
pub use synthetic::{generate_synthetic, Synthetic, SyntheticConfig, MIN_SYNTHETIC_ITEMS};
