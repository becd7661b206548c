//! Training, evaluation and ablation around the model.

mod ablate;
mod config;
mod metrics;
mod train;

pub use ablate::{ablate, parse_variants, AblationReport, AblationRow, Variant};
pub use config::RunConfig;
pub use metrics::{write_confusion_csv, MetricsReport};
pub use train::{
    evaluate_model, run_training, train, train_with, Checkpoint, EpochLog, Evaluation,
    TrainOutcome, CHECKPOINT_FILE, CONFIG_FILE, LOG_FILE, METRICS_FILE,
};
