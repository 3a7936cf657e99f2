//! Experiment orchestration: leave-one-class-out (intraclass) training and
//! evaluation, the intradataset re-evaluation with a second corpus family,
//! temperature sweeps and the CSV/JSON reports.

mod campaign;
mod config;
mod report;
mod sweep;

pub use campaign::{
    crop_all, family_a, family_b, intradataset_outliers, odin_label, run_id, run_intraclass, run_intradataset,
    run_split, sweep_inputs, checkpoint_root, CampaignOutput, RunFailure, RunModels, RunResult, RunSplit, SweepInputs,
};
pub use config::{BackboneSpec, DetectorKind, DetectorSettings, ExperimentConfig};
pub use report::{
    aggregate_rows, read_aggregate, read_results, read_sweep, report, thresholds, write_aggregate, write_results,
    write_sweep, AggregateRow, Manifest, AGGREGATE_COLUMNS,
};
pub use sweep::{best_valid, sweep_runs, sweep_sample, temperature_sweep, SweepPoint, SweepSample, SPLITS};

use std::time::Duration;

use crate::backbone::ModelError;
use crate::metrics::MetricsError;
use crate::skeldata::SkelError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing checkpoint {0}")]
    MissingCheckpoint(String),
    #[error("{0}")]
    Empty(String),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Data(#[from] SkelError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    pub fn is_config(&self) -> bool {
        matches!(self, HarnessError::Config(_))
    }
}

pub fn manifest(command: &str, cfg: &ExperimentConfig, output: &CampaignOutput, wall: Duration) -> Manifest {
    Manifest {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        jobs: cfg.jobs,
        runs: output.runs,
        results: output.results.len(),
        failures: output.failures.clone(),
        checkpoints: output.checkpoints.clone(),
        wall_seconds: wall.as_secs_f64(),
    }
}

#[cfg(test)]
mod tests;
