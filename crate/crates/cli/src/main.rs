//! `styleshift` command-line tool.
//!
//! Settings come from a JSON experiment config (path from `--config` or
//! `STYLESHIFT_CONFIG`); every flag below mirrors a config key and wins over
//! the file. Exit codes: 0 success, 1 usage error, 2 data error, 3 backend or
//! bridge error.

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;

/// Error carrying the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(msg: impl std::fmt::Display) -> Self {
        Failure {
            code: 1,
            error: anyhow::anyhow!("{msg}"),
        }
    }
}

impl From<styleshift::Error> for Failure {
    fn from(e: styleshift::Error) -> Self {
        let code = if e.is_backend() { 3 } else { 2 };
        Failure {
            code,
            error: e.into(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: 2, error: e.into() }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure { code: 2, error: e.into() }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(f.code)
        }
    }
}
