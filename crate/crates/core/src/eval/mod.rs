//! Task label mappings, challenge metrics and score reports.

pub mod metrics;
pub mod report;
pub mod task;

pub use metrics::{
    challenge_scores, challenge_scores_with, combine, confusion, ConfusionMatrix, PqMode, ScoreOptions, ScoreReport,
    SeAggregation,
};
pub use report::{
    check_published_row, gamma_sweep, reference_row, render, reports_from_csv, reports_from_json, reports_to_csv,
    reports_to_json, PublishedRow, ReportFormat, RowCheck, REFERENCE_ROWS,
};
pub use task::{collapse_index, map_labels, Level, TaskId};
