//! The `rredmd` command-line tool.
//!
//! Every subcommand writes a JSON run manifest next to its primary output;
//! `rredmd replay --manifest FILE` re-runs it with identical arguments.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::Error;

pub use config::inject_config;
pub use manifest::{RunManifest, MANIFEST_SCHEMA_VERSION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_STREAM_QUALITY: i32 = 3;
pub const EXIT_FORMAT: i32 = 4;

#[derive(Debug, Parser, Serialize)]
#[command(name = "rredmd", version, about = "Streaming robust Koopman operator learning")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
pub enum Command {
    /// Simulate a reference system and write a canonical CSV trajectory.
    Simulate(SimulateArgs),
    /// Learn an operator from a CSV stream and write a checkpoint.
    Learn(LearnArgs),
    /// Eigenvalues (and optionally an eigenfunction field) of a checkpoint.
    Spectrum(SpectrumArgs),
    /// Roll a checkpoint's operator forward from an initial state.
    Predict(PredictArgs),
    /// Timing benchmarks.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Choose λ by one-step validation error on a held-out suffix.
    SelectLambda(SelectLambdaArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Learn(_) => "learn",
            Command::Spectrum(_) => "spectrum",
            Command::Predict(_) => "predict",
            Command::Bench(BenchCommand::Compare(_)) => "bench compare",
            Command::Bench(BenchCommand::Scaling(_)) => "bench scaling",
            Command::SelectLambda(_) => "select-lambda",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum SystemKind {
    Vdp,
    Ring,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum FormArg {
    Standard,
    Literal,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub system: SystemKind,
    #[arg(long, default_value_t = 0.8)]
    pub mu: f64,
    #[arg(long, default_value_t = 0.2)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    #[arg(long, default_value_t = 10)]
    pub substeps: usize,
    /// Number of samples (rows) to write.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub samples: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Initial state, comma separated. Defaults: vdp `1,0`, ring random, linear all ones.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = FormArg::Standard)]
    pub form: FormArg,
    /// Ring size.
    #[arg(long, default_value_t = 10)]
    pub n_osc: usize,
    /// Ring Laplacian weight.
    #[arg(long, default_value_t = 0.1)]
    pub coupling: f64,
    /// Linear system matrix, rows separated by `;`, e.g. `0.9,0.1;-0.1,0.9`.
    #[arg(long, allow_hyphen_values = true)]
    pub matrix: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InputArgs {
    /// Canonical CSV input.
    #[arg(long)]
    pub input: PathBuf,
    /// State columns by name; default is every column but `t`.
    #[arg(long, value_delimiter = ',')]
    pub columns: Option<Vec<String>>,
    /// Inject Gaussian noise at this per-channel SNR (dB).
    #[arg(long, allow_hyphen_values = true)]
    pub snr_db: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub noise_seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DictArgs {
    /// Number of Gaussian RBF observables.
    #[arg(long, default_value_t = 40)]
    pub rbf: usize,
    /// Fixed RBF width; default is the median pairwise center distance.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long)]
    pub no_identity: bool,
    #[arg(long)]
    pub no_constant: bool,
    /// States buffered for center selection before the dictionary freezes.
    #[arg(long, default_value_t = crate::lifting::DEFAULT_WARMUP)]
    pub warmup: usize,
    #[arg(long, default_value_t = 0)]
    pub dict_seed: u64,
    /// TOML dictionary spec; replaces the individual dictionary flags.
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LearnArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub dict: DictArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: f64,
    #[arg(long, default_value_t = crate::stream::DEFAULT_REFRESH_PERIOD)]
    pub refresh: usize,
    /// Write a spectrum CSV every k absorbed pairs.
    #[arg(long)]
    pub spectrum_every: Option<usize>,
    /// Directory for periodic spectra; defaults to the checkpoint's directory.
    #[arg(long)]
    pub spectrum_dir: Option<PathBuf>,
    /// Continue from a checkpoint; its dictionary is reused.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Pairs to skip at the start of the stream; defaults to the resumed sample count.
    #[arg(long)]
    pub skip_pairs: Option<usize>,
    /// Stop after this many pairs have been read.
    #[arg(long)]
    pub max_pairs: Option<usize>,
    /// Checkpoint output.
    #[arg(long)]
    pub out: PathBuf,
    /// Binary operator output.
    #[arg(long)]
    pub operator_out: Option<PathBuf>,
    /// Operator as CSV.
    #[arg(long)]
    pub operator_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Eigenvalue CSV (`re,im,modulus`).
    #[arg(long)]
    pub out: PathBuf,
    /// Stability tolerance for `|λ| ≤ 1 + tol`.
    #[arg(long, default_value_t = 0.0)]
    pub tolerance: f64,
    /// Eigenfunction field CSV (`x1,x2,re,im,modulus`).
    #[arg(long)]
    pub field: Option<PathBuf>,
    /// Field window `xmin,xmax,ymin,ymax`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-3,3,-4,4")]
    pub window: Vec<f64>,
    #[arg(long, default_value_t = 61)]
    pub nx: usize,
    #[arg(long, default_value_t = 81)]
    pub ny: usize,
    /// State coordinates on the grid axes.
    #[arg(long, value_delimiter = ',', default_value = "0,1")]
    pub axes: Vec<usize>,
    /// Full state for the off-grid coordinates (required when N ≠ 2).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub slice: Option<Vec<f64>>,
    /// Eigenvalue target `re,im` for the field.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "1,0")]
    pub target: Vec<f64>,
    /// Eigenvalue index for the field (overrides `--target`).
    #[arg(long)]
    pub index: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum ModeArg {
    Lifted,
    Relift,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Vec<f64>,
    #[arg(long)]
    pub steps: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Lifted)]
    pub mode: ModeArg,
    /// Time step written to the `t` column.
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
pub enum BenchCommand {
    /// Recursive update vs. batch recomputation on a Van der Pol stream.
    Compare(CompareArgs),
    /// Recursive update cost on ring networks of growing size.
    Scaling(ScalingArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CompareArgs {
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    #[arg(long, default_value_t = 40)]
    pub rbf: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScalingArgs {
    #[arg(long, value_delimiter = ',', default_value = "10,20,40")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 15)]
    pub rbf_per_osc: usize,
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
    #[arg(long, default_value_t = 4096)]
    pub mem_cap_mb: u64,
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SelectLambdaArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub dict: DictArgs,
    /// Candidate λ values.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub grid: Vec<f64>,
    /// Training fraction; the remainder is validation.
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
    /// Table output (`lambda,rmse`).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::StreamQuality { .. } => EXIT_STREAM_QUALITY,
        Error::Format(_) => EXIT_FORMAT,
        _ => EXIT_FAILURE,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run(args: Vec<String>) -> i32 {
    let args = match inject_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(&cli.command, &args) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    run(std::env::args().collect())
}
