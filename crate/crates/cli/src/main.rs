mod commands;
mod config;

use clap::error::ErrorKind;
use clap::Parser;
use commands::{Cli, CliError};
use std::io::Write;
use std::process::ExitCode;

/// Prints one line to stdout; a closed pipe is not an error.
fn emit(line: impl std::fmt::Display) {
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(out) => {
            emit(out);
            ExitCode::SUCCESS
        }
        Err(err) => {
            let code = err.exit_code();
            if let CliError::Check(report) = &err {
                emit(report);
            } else {
                emit(serde_json::json!({ "status": "error", "kind": err.kind(), "message": err.to_string() }));
            }
            eprintln!("error: {err}");
            ExitCode::from(code)
        }
    }
}
