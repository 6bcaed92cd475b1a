//! The `cdpr` command line: `train`, `eval`, `sweep` and `tune-pid`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4
//! unreadable or corrupt artifact. Outputs are staged and renamed into place
//! only when a command succeeds.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use cdpr::CdprError;
use clap::Parser;

mod args;
mod commands;

pub use args::{Cli, Command, CommonArgs, EvalArgs, SweepArgs, TrainArgs, TuneArgs};
pub use commands::{eval, sweep, train, tune_pid};

/// Directory searched for relative `--config` paths and for `default.cfg`.
pub const CONFIG_DIR_VAR: &str = "CDPR_CONFIG_DIR";
pub const DEFAULT_CONFIG_NAME: &str = "default.cfg";

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Config(String),
    Numeric(String),
    Artifact(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Artifact(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
            CliError::Artifact(m) => write!(f, "artifact error: {m}"),
        }
    }
}

impl From<CdprError> for CliError {
    fn from(e: CdprError) -> Self {
        match e {
            CdprError::Config { .. } | CdprError::Io { .. } => CliError::Config(e.to_string()),
            CdprError::PolicyFile(_)
            | CdprError::PolicyVersion { .. }
            | CdprError::PolicyTruncated { .. }
            | CdprError::PolicyDimension { .. } => CliError::Artifact(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Resolves `--config`. Relative paths missing from the working directory
/// are looked up in `$CDPR_CONFIG_DIR`; with no flag, that directory's
/// `default.cfg` is used when present.
pub fn resolve_config_path(arg: Option<&Path>, config_dir: Option<&Path>) -> CliResult<Option<PathBuf>> {
    match arg {
        Some(p) if p.is_file() => Ok(Some(p.to_path_buf())),
        Some(p) => match config_dir.map(|d| d.join(p)) {
            Some(q) if p.is_relative() && q.is_file() => Ok(Some(q)),
            _ => Err(CliError::Config(format!("config file {} not found", p.display()))),
        },
        None => Ok(config_dir.map(|d| d.join(DEFAULT_CONFIG_NAME)).filter(|q| q.is_file())),
    }
}

pub fn config_dir_from_env() -> Option<PathBuf> {
    std::env::var_os(CONFIG_DIR_VAR)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

/// Where a command writes its console output and finds default configs.
pub struct Context<'a> {
    pub out: &'a mut dyn Write,
    pub err: &'a mut dyn Write,
    pub config_dir: Option<PathBuf>,
}

/// Runs against the process streams and `$CDPR_CONFIG_DIR`; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let (mut out, mut err) = (std::io::stdout(), std::io::stderr());
    let mut ctx = Context {
        out: &mut out,
        err: &mut err,
        config_dir: config_dir_from_env(),
    };
    run_with(args, &mut ctx)
}

pub fn run_with<I, T>(args: I, ctx: &mut Context<'_>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let (code, sink) = if e.use_stderr() {
                (2, &mut ctx.err)
            } else {
                (0, &mut ctx.out)
            };
            let _ = write!(sink, "{}", e.render());
            return code;
        }
    };
    let result = match &cli.command {
        Command::Train(a) => train(ctx, a),
        Command::Eval(a) => eval(ctx, a),
        Command::Sweep(a) => sweep(ctx, a),
        Command::TunePid(a) => tune_pid(ctx, a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(ctx.err, "cdpr: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(CliError::from(CdprError::config("x", "y")).exit_code(), 2);
        assert_eq!(CliError::from(CdprError::NonFiniteGradient).exit_code(), 3);
        assert_eq!(
            CliError::from(CdprError::PolicyTruncated { expected: 2, found: 1 }).exit_code(),
            4
        );
    }

    #[test]
    fn config_lookup_order() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(resolve_config_path(None, Some(dir.path())).unwrap(), None);
        std::fs::write(dir.path().join(DEFAULT_CONFIG_NAME), "seed = 1\n").unwrap();
        assert_eq!(
            resolve_config_path(None, Some(dir.path())).unwrap(),
            Some(dir.path().join(DEFAULT_CONFIG_NAME))
        );
        std::fs::write(dir.path().join("a.cfg"), "").unwrap();
        assert_eq!(
            resolve_config_path(Some(Path::new("a.cfg")), Some(dir.path())).unwrap(),
            Some(dir.path().join("a.cfg"))
        );
        assert!(matches!(
            resolve_config_path(Some(Path::new("missing.cfg")), Some(dir.path())),
            Err(CliError::Config(_))
        ));
    }
}
