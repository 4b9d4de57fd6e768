//! Cross-validation harness and scoring metrics.

mod cv;
mod folds;
mod metrics;

pub use cv::{
    run_cross_validation, CellKey, CvError, FoldLabel, Metric, MetricCell, MetricsReport, Prediction, Region,
    ScoredPayload,
};
pub use folds::{make_folds, FoldAssignment, FoldError};
pub use metrics::{cel, entropy, mae, pearson_r2, rmse, MetricError, CEL_FLOOR};
