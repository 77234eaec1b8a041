//! Accuracy and latency measurement: density grids, hourly histograms,
//! interval estimates, retrieval timing, synthetic data and report output.

pub mod bench;
pub mod ci;
pub mod density;
pub mod hourly;
pub mod report;
pub mod synthetic;

pub use bench::{bench_retrieval, bench_sampler, LatencyReport, TimingSummary, WARMUP_RUNS};
pub use ci::{ci_mean, ci_mean_at};
pub use density::{count_grid, default_bandwidth, kde_grid, rmse_masked, DensityGrid, DEFAULT_MASK_THRESHOLD};
pub use hourly::{hourly_histogram, rmse_hourly, HourHistogram};
pub use report::{MetricRecord, ReportWriter};
pub use synthetic::{generate_synthetic, Cluster, SyntheticMode, SyntheticSpec};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("grid shapes differ: {left:?} vs {right:?}")]
    ShapeMismatch { left: (usize, usize), right: (usize, usize) },
    #[error("no cells pass the mask")]
    EmptyMask,
    #[error("need at least 2 values, got {0}")]
    SampleTooSmall(usize),
}
