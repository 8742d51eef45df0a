//! Classification metrics and result tables.

mod metrics;
mod report;

pub use metrics::{
    accuracy, class_metrics, confusion, macro_f1, ner_metrics, ClassMetrics, ConfusionMatrix, MetricError,
};
pub use report::{
    build_reports, format_percent, render_report, render_table, EvalReport, ReportError, ReportRow, ResultRecord,
};
