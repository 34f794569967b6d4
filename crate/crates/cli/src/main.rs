//! `integrable`: command-line front end. Exit status 0 means every check
//! passed, 1 a failed check or certificate, 2 an input error.

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let outcome = match &cli.command {
        Command::Verify(a) => commands::verify(a),
        Command::Integrate(a) => commands::integrate_cmd(a),
        Command::Linearize(a) => commands::linearize(a),
        Command::Classify(a) => commands::classify_cmd(a),
        Command::Bracket(a) => commands::bracket_cmd(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.exit_code())
        }
    }
}
