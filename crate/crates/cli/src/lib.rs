//! Configuration-driven front end: every command reads a [`RunConfig`],
//! writes CSV files and a manifest into the output directory, and maps its
//! outcome to an exit code.

pub mod commands;
pub mod config;
pub mod verify;

use std::fmt;

pub use commands::{run, Command, Outcome};
pub use config::RunConfig;

/// Errors that end a run, grouped by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or inputs: exit 2.
    Config(String),
    /// Solver, integrator or I/O failure: exit 3.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<adiabound::Error> for CliError {
    fn from(e: adiabound::Error) -> Self {
        use adiabound::Error as E;
        match e {
            E::Validation(_) | E::WrongVariant(_) | E::ScheduleInfeasible { .. } | E::Regime(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Numerical(format!("I/O: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Numerical(format!("writing CSV: {e}"))
    }
}

/// Exit code of a finished run: 0 pass, 1 flagged.
pub const EXIT_PASS: u8 = 0;
pub const EXIT_FLAGGED: u8 = 1;
