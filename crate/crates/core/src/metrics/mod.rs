//! Evaluation metrics and hourly aggregation.

mod rank;
mod report;

pub use rank::{auc, nll, pr_auc};
pub use report::{
    attach_relative_improvements, relative_improvement, render_jsonl, render_table, streaming_aggregate,
    HourMetrics, HourWeighting, MetricKind, MetricReport, MetricSummary, RelativeImprovement,
};
