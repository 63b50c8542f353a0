//! Command-line front end for the robust-classifier toolkit.
//!
//! The binary exposes five subcommands:
//!
//! * `train`    — fit a fully-connected ReLU classifier with one of the
//!   four training schemes and save it, a per-epoch CSV, and a manifest.
//! * `attack`   — run an adversarial attack against a saved model and
//!   write a per-sample CSV plus a success-rate summary.
//! * `verify`   — certify per-input robustness and write a per-input
//!   verdict CSV plus an `ACC=…,ERA=…,VRA=…` summary line.
//! * `gen-data` — materialize a dataset specification to a CSV file.
//! * `rerun`    — replay any previous run from its manifest.
//!
//! Every run writes exactly one plain `key=value` manifest recording the
//! fully resolved configuration; feeding it back through `rerun`
//! reproduces model files and verdict columns bit-identically.
//!
//! Exit codes: `0` success, `2` training divergence, `64` usage error,
//! `74` file I/O or format error.

use std::fmt;

pub mod args;
pub mod commands;
pub mod dataspec;
pub mod manifest;

use clap::Parser;
use vrnn_core::Error as CoreError;

/// Everything a subcommand can fail with: a usage problem of the
/// command line itself, or an error bubbled up from the library.
#[derive(Debug)]
pub enum CliError {
    /// Bad flag combination or malformed argument (exit 64).
    Usage(String),
    /// Library failure; the exit code depends on the variant.
    Core(CoreError),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(CoreError::Io(e))
    }
}

/// Shorthand for building a usage error.
pub(crate) fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Exit code for a failed run: 2 for divergence, 74 for I/O and file
/// format problems, 64 for everything the user can fix on the command
/// line.
pub fn exit_code(e: &CliError) -> i32 {
    match e {
        CliError::Usage(_) => 64,
        CliError::Core(err) => match err {
            CoreError::Diverged { .. } => 2,
            CoreError::Io(_) | CoreError::Format { .. } => 74,
            CoreError::InvalidConfig(_)
            | CoreError::DimMismatch { .. }
            | CoreError::NonFinite(_) => 64,
        },
    }
}

/// Parse `argv` and execute the selected subcommand, returning the
/// process exit code. `main` is a one-line wrapper around this so the
/// whole surface stays testable in-process.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match args::Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            // `--help`/`--version` arrive here too; they print to stdout
            // and exit 0, while real parse errors print to stderr and
            // exit with the usage code.
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
