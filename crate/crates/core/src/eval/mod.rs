//! Metrics, the experimental grid, reports and plots.

pub mod grid;
pub mod metrics;
pub mod plot;
pub mod report;

pub use grid::{corrupt_input, evaluate_sample, floor_errors, run_grid, stage_seed, ExperimentGrid, Models};
pub use metrics::{avg_position_error, end_pose_error, key_pose_angle_error, sample_errors, SampleErrors};
pub use plot::{plot_report, plot_sweep, plot_top_view, Sweep};
pub use report::{
    read_csv, read_jsonl, write_csv, write_jsonl, write_report, write_summary_csv, Metric, MetricReport,
    ReportFormat, ReportRow, SummaryRow, CSV_HEADER,
};
