//! Evaluation metrics, reference scoring and sensitivity sweeps.

mod report;
mod stats;
mod sweep;

pub use report::{
    collect_runs, load_reference, profit_summary, reference_metrics, MetricRow, ProfitRow,
    ReferenceRow, RunEntry, METRICS, POOLED,
};
pub use stats::{
    aggregate_alignment, average_ranks, bid_ceiling_ratio, log_r_squared, mean_ci95, pearson,
    quantile, r_squared, spearman, winner_alignment, winner_matches, Spearman,
};
pub use sweep::{sweep, sweep_seeds, write_sweep_csv, SweepRow, SweepSpec};
