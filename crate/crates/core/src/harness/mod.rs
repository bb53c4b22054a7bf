//! Experiment harness: configuration, dual-track runs, evaluation metrics,
//! report files and sweeps.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod scenarios;
pub mod sweep;

pub use config::{ExperimentConfig, StreamSpec};
pub use experiment::{
    calibrate_threshold, prepare, run_experiment, run_prepared, run_single, run_static_select, summarize_report_dir,
    synthetic_config, ExperimentReport, LogSummary, Prepared, Summary, TraceRecord, TrackSummary,
};
pub use metrics::{classify_early_substitutions, penalty, residual_error, EarlyStats, PenaltyParams};
pub use scenarios::{alternating_pool, inject_drift, stationary_pool};
