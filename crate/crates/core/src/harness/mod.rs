//! Evaluation pipeline: run methods on seeded cohorts, normalize against
//! exact optima, aggregate, compare methods pairwise, time them and write
//! the results.
//!
//! Record CSV columns, in order:
//! `instance_id,method,n,m,dist,nash_ratio,util_ratio,ef1,efx,repair_passes,repair_transfers,wall_time_us`.
//! `nash_ratio` is empty when the Nash optimum was not proven within the
//! node budget. `efx` is checked against every item of the envied bundle,
//! zero-valued ones included.

mod bench;
mod cohort;
mod emit;
mod method;
mod stats;

pub use bench::{bench, loglog_slope, Environment, TimingRow, TimingTable};
pub use cohort::{evaluate, evaluate_instance, instance_id, CohortManifest, EvalOptions, Optima, RunRecord};
pub use emit::{
    plot_data, read_records, read_records_csv, write_aggregates, write_comparisons, write_plot_data, write_records,
    write_records_csv, write_report, write_timings, Format, PlotPoint, RECORD_HEADER,
};
pub use method::{Method, DEFAULT_MAX_PASSES};
pub use stats::{
    aggregate, paired_diffs, paired_stats, ratio_bucket, wilcoxon_signed_rank, AggregateRow, Grouping, Metric,
    PairedComparison, Summary, WILCOXON_EXACT_MAX,
};
