//! Experiment orchestration and command-line interface.
//!
//! An [`config::ExperimentConfig`] names a fixture, a grid of sample sizes
//! and a list of seeds. Every `(n, seed)` cell simulates a dataset, fits the
//! estimators, learns a policy pair and scores everything against the exact
//! oracle. Results are written as deterministic CSV reports with a manifest.

pub mod cli;
pub mod config;
pub mod experiment;
pub mod policies;
pub mod report;

use std::path::Path;

pub use config::{ExperimentConfig, Metric};
pub use experiment::{prepare, run_cell, run_grid, CellResult};
pub use report::ReportPaths;

/// Failures that abort a whole experiment.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Core(#[from] confgame_core::Error),
    #[error("cannot write reports: {0}")]
    Io(#[from] std::io::Error),
}

/// Validates the config, runs every cell and writes the reports into `out`
/// (the config's output directory when `None`).
pub fn run_experiment(config: &ExperimentConfig, out: Option<&Path>) -> Result<(Vec<CellResult>, ReportPaths), HarnessError> {
    config.validate()?;
    let prep = prepare(config)?;
    let cells = run_grid(&prep);
    let dir = out.unwrap_or(&config.out);
    let paths = report::write_reports(dir, config, &cells)?;
    Ok((cells, paths))
}
