//! Experiment driver for the multi-resolution LOD method: configuration,
//! experiment orchestration and CSV/metadata persistence.

pub mod config;
pub mod experiments;
pub mod output;

use std::path::Path;

pub use config::{Experiment, ExperimentConfig, RawConfig};
pub use experiments::run_experiment;
pub use output::{Report, Table};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] mrlod_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// Process exit code: 1 for configuration and setup errors.
    pub fn exit_code(&self) -> i32 {
        1
    }
}

/// Resolves the configuration, runs the experiment and writes
/// `<out>/<experiment>.csv` plus its `.meta` sidecar.
pub fn run_to_dir(
    experiment: Experiment,
    file: &RawConfig,
    overrides: &RawConfig,
    out: &Path,
    parallel: bool,
) -> Result<Report, CliError> {
    let cfg = ExperimentConfig::resolve(experiment, file, overrides)?;
    let report = run_experiment(&cfg, parallel);
    report.write(out, experiment.name())?;
    Ok(report)
}

/// Exit code of a finished run: 0 if every row succeeded, 2 otherwise.
pub fn report_exit_code(report: &Report) -> i32 {
    if report.failures == 0 {
        0
    } else {
        2
    }
}
