use std::process::ExitCode;

use clap::Parser;
use hypodens_cli::{init_threads, run, Cli, CliError};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| run(&cli));
    match result {
        Ok(outcome) => {
            for line in &outcome.console {
                println!("{line}");
            }
            if outcome.passed() {
                ExitCode::SUCCESS
            } else {
                eprintln!("hypodens: one or more criteria failed");
                ExitCode::from(CliError::EXIT_FAILURE)
            }
        }
        Err(e) => {
            eprintln!("hypodens: {e}");
            e.into()
        }
    }
}
