use std::path::PathBuf;
use std::process::ExitCode;

use adiabound_cli::{run, Command, RunConfig, EXIT_FLAGGED, EXIT_PASS};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adiabound", version, about = "Adiabatic timescale bounds and their numerical checks")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides run.out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for randomized inputs (overrides run.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweep cells (overrides run.workers).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Eigenvalues, gap and diameter along the path.
    Spectrum,
    /// Anneal controls b(s), f(s) and derived frequencies.
    Schedule,
    /// The three adiabatic timescales at s*.
    Bounds,
    /// Exact vs intertwined evolution over a t_f sweep.
    Evolve,
    /// Effective Hamiltonian spectrum against the exact one.
    Effective,
    /// Brute-force leakage of the dilated well over an (A, B) grid.
    Oracle,
    /// The invariant suite with a pass/fail line per invariant.
    Verify,
    /// A bounds or evolve run over several A.
    Sweep,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Spectrum => Command::Spectrum,
            Cmd::Schedule => Command::Schedule,
            Cmd::Bounds => Command::Bounds,
            Cmd::Evolve => Command::Evolve,
            Cmd::Effective => Command::Effective,
            Cmd::Oracle => Command::Oracle,
            Cmd::Verify => Command::Verify,
            Cmd::Sweep => Command::Sweep,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    };
    let mut cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(e.exit_code());
        }
    };
    if let Some(o) = cli.out {
        cfg.run.out = o.to_string_lossy().into_owned();
    }
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.run.workers = w;
    }
    match run(cli.command.into(), &cfg) {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            ExitCode::from(if outcome.flagged { EXIT_FLAGGED } else { EXIT_PASS })
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
