//! Experiment driver: configuration, subcommands and artifacts.

pub mod build;
pub mod config;
pub mod run;

use std::path::PathBuf;

use clap::{Parser, ValueEnum};

pub use build::ProblemBuilder;
pub use config::{parse_config, parse_config_str, ConfigErrors, ExperimentConfig, Seed};
pub use run::{execute, verification_report, Outcome, Subcommand};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Simulate,
    Verify,
    Capacity,
    Convergence,
}

impl From<Command> for Subcommand {
    fn from(c: Command) -> Self {
        match c {
            Command::Simulate => Subcommand::Simulate,
            Command::Verify => Subcommand::Verify,
            Command::Capacity => Subcommand::Capacity,
            Command::Convergence => Subcommand::Convergence,
        }
    }
}

/// Numerical lab for obstacle problems of quasilinear stochastic PDEs.
#[derive(Debug, Parser)]
#[command(name = "ospde", version)]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// Experiment configuration (TOML); a manifest from an earlier run works too.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, overriding `run.out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of Monte Carlo paths, overriding `run.paths`.
    #[arg(long)]
    pub paths: Option<u64>,
    /// Master seed, overriding `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Parses, runs and maps the result to the exit-code contract: 0 when
/// every check passes, 1 when one fails, 2 on configuration or execution
/// errors.
pub fn run_cli(cli: &Cli) -> i32 {
    let mut cfg = match parse_config(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprint!("{e}");
            return EXIT_ERROR;
        }
    };
    if let Some(p) = cli.paths {
        if p == 0 {
            eprintln!("--paths must be at least 1");
            return EXIT_ERROR;
        }
        cfg.run.paths = p;
    }
    if let Some(s) = cli.seed {
        cfg.run.seed = Some(Seed(s));
    }
    if let Some(o) = &cli.out {
        cfg.run.out = o.to_string_lossy().into_owned();
    }
    cfg.manifest = None;
    let out = PathBuf::from(&cfg.run.out);
    match execute(&cfg, cli.command.into(), &out) {
        Ok(o) => {
            println!("{}", o.summary.trim_end());
            if o.pass {
                EXIT_PASS
            } else {
                EXIT_CHECK_FAILED
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}
