//! Command-line laboratory for random walk in random scenery.
//!
//! Experiments are described by a TOML file, optionally overridden by
//! command-line flags, and produce a JSON report plus long-format CSV plot
//! data. Precedence for every field is: flag, then file, then default.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod runner;

pub use rwrs_core;

pub use cli::{resolve_args, run_cli, Cli};
pub use commands::{execute, plan, Outcome, Plan};
pub use config::ExperimentConfig;
pub use error::{LabError, Result};
pub use output::{PlotTable, Report};

/// Validates and runs a resolved configuration without writing anything.
pub fn run(config: ExperimentConfig) -> Result<(Report, Outcome)> {
    let plan = commands::plan(&config)?;
    let outcome = commands::execute(&plan)?;
    let report = Report::new(config, outcome.converged, outcome.result.clone());
    Ok((report, outcome))
}
