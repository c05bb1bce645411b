//! Command-line driver: run configuration, the binary checkpoint format and
//! the `train`, `evaluate`, `gradcheck`, `synth` and `augment-stats` commands.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or I/O
//! error, 3 verification failure.

pub mod checkpoint;
pub mod commands;
pub mod config;

use tcmn_core::eval::EvalError;
use tcmn_core::optim::OptimError;

pub use commands::{run, Cli, Command};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Checkpoint(#[from] checkpoint::CheckpointError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("verification failed: {0}")]
    Verification(String),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Data(_) | CliError::Checkpoint(_) | CliError::Io { .. } => 2,
            CliError::Verification(_) => 3,
            CliError::Optim(e) => match e {
                OptimError::Data(_)
                | OptimError::Hook(_)
                | OptimError::Eval(EvalError::Io { .. }) => 2,
                _ => 1,
            },
            CliError::Eval(e) => match e {
                EvalError::Data(_) | EvalError::Io { .. } => 2,
                _ => 1,
            },
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Help and version output exit with 0.
pub fn main_with_args<I, T>(
    args: I,
    out: &mut dyn std::io::Write,
    err: &mut dyn std::io::Write,
) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    use clap::Parser;
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match run(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
