use std::process::ExitCode;

use clap::Parser;
use ospde_cli::{run_cli, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    ExitCode::from(run_cli(&cli) as u8)
}
