//! Experiment harness: configuration, per-seed scenario stages, metrics and
//! manifests. Layout of every scenario's output is documented in
//! `docs/experiments.md`.

pub mod config;
pub mod gradcheck;
pub mod metrics;
pub mod run;
pub mod stages;

use std::path::Path;

use crate::checkpoint::Checkpoint;
use crate::error::Result;

pub use config::{ExperimentConfig, Scenario, OUTPUT_DIR_ENV};
pub use gradcheck::{grad_check_suite, GradCheckRow, GRAD_TOLERANCE};
pub use metrics::{emit_metrics, format_value, metrics_csv, MetricsRow, METRICS_HEADER};
pub use run::{run_eval, run_experiment, Manifest, ManifestEntry, MANIFEST_FILE, METRICS_FILE, SUMMARY_FILE};

/// Writes `ck` to `path`; the stored digest covers every preceding byte.
pub fn save_checkpoint(ck: &Checkpoint<f64>, path: impl AsRef<Path>) -> Result<()> {
    ck.save(path)
}

/// Reads a checkpoint and verifies its digest.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint<f64>> {
    Checkpoint::load(path)
}
