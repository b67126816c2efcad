use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    ExitCode::from(chkp_cli::run(&chkp_cli::Cli::parse()))
}
