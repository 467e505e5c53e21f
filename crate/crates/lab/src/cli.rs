//! Argument parsing and artifact writing for the `rwrs` binary.
//!
//! Exit codes: 0 success, 2 invalid request, 3 finished without convergence
//! (artifacts are still written), 4 i/o failure.

use std::ffi::OsString;
use std::io::Write;

use clap::{Parser, Subcommand};

use crate::config::{
    BoxStudyConfig, CommandFlags, ExperimentConfig, GlobalFlags, RateTableConfig, SimulateConfig, SolveConfig,
    SpectralConfig, TailConfig, TrialConfig,
};
use crate::error::{LabError, Result};
use crate::output::write_text;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "rwrs", version, about = "Random walk in random scenery: simulation, tail estimates and rate constants")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalFlags,
    /// Experiment to run; falls back to `command` in the config file.
    #[command(subcommand)]
    pub command: Option<Sub>,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Local-time statistics and Z_n moments.
    Simulate(SimulateConfig),
    /// One tail probability P(Z_n/n > b).
    Tail(TailConfig),
    /// Rate-normalized tail estimates over a list of n.
    RateTable(RateTableConfig),
    /// Variational constants K_{D,q}, K_H(u) or χ on a grid.
    Solve(SolveConfig),
    /// Transfer-matrix cumulants against the continuum eigenvalue.
    SpectralCheck(SpectralConfig),
    /// The χ = 0 trial sequence.
    TrialSequence(TrialConfig),
    /// Dirichlet and periodic box approximations.
    BoxStudy(BoxStudyConfig),
}

impl Sub {
    fn into_flags(self) -> CommandFlags {
        match self {
            Sub::Simulate(c) => CommandFlags::Simulate(c),
            Sub::Tail(c) => CommandFlags::Tail(c),
            Sub::RateTable(c) => CommandFlags::RateTable(c),
            Sub::Solve(c) => CommandFlags::Solve(c),
            Sub::SpectralCheck(c) => CommandFlags::SpectralCheck(c),
            Sub::TrialSequence(c) => CommandFlags::TrialSequence(c),
            Sub::BoxStudy(c) => CommandFlags::BoxStudy(c),
        }
    }
}

/// Loads the file, applies the flags and fills defaults.
pub fn resolve(cli: Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.global.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let flags = cli.command.map(Sub::into_flags);
    config.apply_flags(&cli.global, flags.as_ref())?;
    config.resolve()
}

/// Parses `args` (including the program name) into a resolved configuration.
pub fn resolve_args<I, T>(args: I) -> Result<ExperimentConfig>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| crate::error::config_error(e.to_string()))?;
    resolve(cli)
}

fn write_artifacts(report: &crate::output::Report, outcome: &crate::commands::Outcome, stdout: &mut dyn Write) -> Result<()> {
    let json = report.to_json()?;
    match &report.config.output {
        Some(path) => write_text(path, &json)?,
        None => stdout.write_all(json.as_bytes()).map_err(|e| LabError::io("<stdout>", e))?,
    }
    if let Some(path) = &report.config.plot {
        outcome.plot.write(path)?;
    }
    for (path, table) in &outcome.extra {
        table.write(path)?;
    }
    Ok(())
}

/// Runs the tool on `args` (including the program name) and returns the exit code.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let result = resolve(cli).and_then(crate::run);
    let (report, outcome) = match result {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return e.exit_code();
        }
    };
    if let Err(e) = write_artifacts(&report, &outcome, stdout) {
        let _ = writeln!(stderr, "error: {e}");
        return e.exit_code();
    }
    if outcome.converged {
        EXIT_OK
    } else {
        let _ = writeln!(stderr, "warning: the solver did not converge");
        EXIT_NOT_CONVERGED
    }
}
