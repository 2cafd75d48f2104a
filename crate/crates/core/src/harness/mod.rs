//! Training, cross-validation and evaluation.

mod augment;
mod folds;
mod metrics;
mod optim;
mod train;

pub use augment::{augment, rotate_bilinear, AugmentDraw};
pub use folds::{make_folds, FoldPlan, InnerSplit};
pub use metrics::{confusion_matrix, evaluate, ClassTally, Metrics, MetricsReport, Summary};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use train::{
    evaluate_params, fit, CheckpointMeta, run_cv, CvOptions, CvOutcome, EpochStats, FitResult, FoldAudit, FoldOutcome, TrainConfig,
};
