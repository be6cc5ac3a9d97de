//! The `dpgm` command-line tool.
//!
//! Exit codes: 0 success, 2 usage, 3 data, 4 numerical.

pub mod args;
pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::fmt;

use clap::Parser;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    /// Loading failures are data errors whatever their cause.
    pub fn loading(what: &str, e: dpgm::Error) -> Self {
        Self::data(format!("{what}: {e}"))
    }
}

impl From<dpgm::Error> for CliError {
    fn from(e: dpgm::Error) -> Self {
        let code = match e.root() {
            dpgm::Error::Numerical(_) => EXIT_NUMERICAL,
            _ => EXIT_DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::data(e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Parses `args` and runs the command, printing to stdout. Returns the exit
/// code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match args::Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::run(cli.command) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
