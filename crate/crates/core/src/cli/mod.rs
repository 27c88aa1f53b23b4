//! Command-line front end: `analyze`, `simulate`, `validate`, `sparse` and `compare`.
//!
//! Exit codes: 0 success, 2 input error, 3 insufficient data, 4 numerical
//! failure, 5 validation failure.

mod commands;
pub mod config;
pub mod io;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use config::{ModeArg, NodeRange, PipelineArg, SolverArg};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_VALIDATION: i32 = 5;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "POLYSCOPE_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::input(message)
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidParameter(_)
            | Error::InvalidInput(_)
            | Error::ShapeMismatch(_)
            | Error::UnknownNode(_)
            | Error::Io(_) => EXIT_INPUT,
            Error::InsufficientData { .. } | Error::DegenerateSeries(_) => EXIT_DATA,
            Error::InvalidSpectrum(_)
            | Error::IllConditioned { .. }
            | Error::Numerical(_)
            | Error::CombinatorialLimit { .. } => EXIT_NUMERICAL,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "polyscope", version, about = "Infer network topology from time series")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Distance matrices and a tree, polytree or blanket graph for a CSV ensemble.
    Analyze(AnalyzeArgs),
    /// Generate a random polytree network and simulate it.
    Simulate(SimulateArgs),
    /// Batch recovery experiments on generated networks.
    Validate(ValidateArgs),
    /// Sparse MISO models for each target series.
    Sparse(SparseArgs),
    /// Correlation versus coherence distances on the same ensemble.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Flat `key = value` file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SpectralArgs {
    /// Frequency grid size and Welch segment length (power of two >= 64).
    #[arg(long)]
    pub grid_size: Option<usize>,
    /// Minimum number of averaged Welch segments.
    #[arg(long)]
    pub segments: Option<usize>,
    /// Fractional Welch segment overlap in [0, 0.9].
    #[arg(long)]
    pub overlap: Option<f64>,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// CSV with a header row of labels and one column per series.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Moving-mean window for seasonal detrending; 0 disables it.
    #[arg(long)]
    pub detrend_window: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub spectral: SpectralArgs,
    /// Average distances over consecutive windows of this length; 0 uses the whole record.
    #[arg(long)]
    pub window_length: Option<usize>,
    /// mst, polytree or miso-blanket.
    #[arg(long)]
    pub pipeline: Option<PipelineArg>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub spectral: SpectralArgs,
    #[arg(long)]
    pub window_length: Option<usize>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct SparseArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub spectral: SpectralArgs,
    /// Largest number of inputs per target.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Relative residual-norm improvement required to add an input.
    #[arg(long)]
    pub min_gain: Option<f64>,
    /// exhaustive, mp or ols.
    #[arg(long)]
    pub solver: Option<SolverArg>,
    /// Label of a single target; all series by default.
    #[arg(long)]
    pub target: Option<String>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub length: Option<usize>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub trials: Option<usize>,
    /// Node count or inclusive range such as 4-16.
    #[arg(long)]
    pub nodes: Option<NodeRange>,
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long)]
    pub pipeline: Option<PipelineArg>,
    /// analytic or simulated spectra.
    #[arg(long)]
    pub mode: Option<ModeArg>,
    #[command(flatten)]
    pub spectral: SpectralArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::input(format!("{THREADS_ENV} must be a positive integer, got '{raw}'")))?;
    // A pool built earlier in the same process keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match configure_threads().and_then(|_| commands::execute(cli.command)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
