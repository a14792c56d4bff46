//! Measurement pipeline: log records, cost metering, latency, aggregation
//! by group size, regression fits and file export.

use thiserror::Error;

pub mod analysis;
pub mod cost;
pub mod export;
pub mod latency;
pub mod log;

pub use analysis::{auc, aggregate, average_series, fit, Bucketing, FitModel, RegressionFit, Series};
pub use cost::{CostClock, CostMeter};
pub use latency::{compute_latency, LatencyReport, LatencySample};
pub use log::{parse_line, parse_log, Action, LogRecord, LogSink};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("line {line}: {reason}")]
    BadLine { line: usize, reason: String },
    #[error("proposal cost count {got} does not match {n} modifications")]
    BadArity { got: usize, n: usize },
    #[error("series needs at least three points with distinct x values")]
    DegenerateSeries,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
