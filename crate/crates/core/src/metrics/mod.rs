//! Agreement and error metrics.

mod kappa;
mod report;

pub use kappa::{accuracy, cohen_kappa, quadratic_weighted_kappa, LabelSeries};
pub use report::{
    confusion_csv, render_table, run_metrics, CriterionReport, DiscrepancyCounts, RunMetrics,
    TOTAL_SCORE_ROW,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("label series is empty")]
    EmptySeries,
    #[error("value range [{min}, {max}] is empty")]
    BadRange { min: i64, max: i64 },
    #[error("pair ({human}, {predicted}) lies outside [{min}, {max}]")]
    ValueOutOfRange {
        human: i64,
        predicted: i64,
        min: i64,
        max: i64,
    },
    #[error("weighted kappa needs at least two levels")]
    SingleLevelRange,
    #[error("run has no pairs with both a human label and a parsed prediction")]
    NoLabeledPairs,
}
