//! Command-line front end for the Weyl-Titchmarsh toolkit.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or configuration
//! error, 3 numerical non-convergence.

pub mod commands;
pub mod config;
pub mod io;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use weyl_core::SpectralError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(m: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: m.into(),
        }
    }

    pub fn config(m: impl Into<String>) -> Self {
        Self::usage(m)
    }

    pub fn io(e: impl fmt::Display) -> Self {
        Self::usage(format!("i/o error: {e}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<SpectralError> for CliError {
    fn from(e: SpectralError) -> Self {
        use SpectralError::*;
        let code = match e {
            TruncationNotConverged { .. }
            | StepSizeUnderflow { .. }
            | SingularNormalization { .. }
            | SingularPencil { .. }
            | SingularW { .. }
            | SingularShift
            | NotHerglotz { .. }
            | KernelMismatch(_) => EXIT_NUMERIC,
            _ => EXIT_USAGE,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "weyl", version, about = "Weyl-Titchmarsh m-functions, spectral measures and expansions")]
pub struct Cli {
    /// Problem description (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; created when missing.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Size of the worker pool.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Tolerance override `key=value` (repeatable), e.g. `--tol psd=1e-9`.
    #[arg(long, global = true)]
    pub tol: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tabulate m(z) for the configured z values.
    MFunction {
        /// Extra spectral parameter `re,im` (repeatable).
        #[arg(long = "z", allow_hyphen_values = true)]
        z: Vec<String>,
    },
    /// Spectral measure on the configured window: JSON plus density CSV.
    SpectralMeasure,
    /// Green's function at the configured (z, x, x') points.
    Greens,
    /// Eigenfunction transform of a sampled signal.
    Expand {
        /// Signal CSV with columns x, re_0, im_0, ...
        #[arg(long)]
        signal: Option<PathBuf>,
        /// Also reconstruct the signal and report the relative L2 error.
        #[arg(long)]
        roundtrip: bool,
    },
    /// Full-line 2n x 2n spectral measure.
    FulllineMeasure,
    /// Run invariant suites and report residuals.
    Verify {
        /// wronskian, herglotz, lft, parseval, stone, greens or all.
        #[arg(long, default_value = "all")]
        suite: String,
    },
}

/// What a successful command prints.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Outcome {
    pub stdout: String,
    pub code: i32,
}

/// Parses arguments and runs the command; returns the exit code. Output
/// goes to stdout, diagnostics to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(o) => {
            print!("{}", o.stdout);
            o.code
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::usage("--config PATH is required"))?;
    let mut cfg = config::ProblemConfig::load(path)?;
    for t in &cli.tol {
        cfg.apply_tol_override(t)?;
    }
    let go = || commands::dispatch(&cli.command, &cfg, &cli.out);
    match cli.threads {
        None => go(),
        Some(0) => Err(CliError::usage("--threads must be at least 1")),
        Some(n) => with_pool(n, go),
    }
}

#[cfg(feature = "parallel")]
fn with_pool<R: Send>(n: usize, f: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn with_pool<R: Send>(_n: usize, f: impl FnOnce() -> R + Send) -> R {
    f()
}
