//! `panoptic` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

mod commands;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use panoptic_core::{LocationMode, ProportionBase, Strategy};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "panoptic", version, about = "Mask-wise merging, assignment and PQ evaluation for panoptic segmentation")]
pub struct Cli {
    /// Worker threads for image-level parallelism (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic prediction set and its ground truth.
    Synth(SynthArgs),
    /// Merge a prediction set into panoptic maps.
    Merge(MergeArgs),
    /// Evaluate PQ/SQ/RQ of merged maps against ground truth.
    Eval(EvalArgs),
    /// Match thing queries to ground-truth things; bind stuff queries.
    Assign(AssignArgs),
    /// Predict a mask from multi-scale attention with the linear head.
    Fuse(FuseArgs),
    /// Per-query thing preference and precision, binned by decile.
    Stats(StatsArgs),
    /// Time merge strategies over a prediction set or synthetic stream.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of images.
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 64)]
    pub h: usize,
    #[arg(long, default_value_t = 64)]
    pub w: usize,
    #[arg(long, default_value_t = 4)]
    pub things: usize,
    #[arg(long, default_value_t = 2)]
    pub stuff_bands: usize,
    /// Standard deviation of the additive mask noise.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.3)]
    pub overlap: f64,
    #[arg(long, default_value_t = 1)]
    pub distractors: usize,
    /// Pad every stack with distractors up to this many masks.
    #[arg(long)]
    pub pad_to: Option<usize>,
    /// Output directory; receives `pred/` and `gt/`.
    #[arg(long)]
    pub out: PathBuf,
}

/// Confidence and overlap thresholds shared by `merge` and `bench`.
#[derive(Debug, Clone, Args)]
pub struct MergeFlags {
    /// Exponent of the class probability in the confidence score.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Exponent of the mask quality in the confidence score.
    #[arg(long, default_value_t = 2.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.25)]
    pub t_cnf: f64,
    #[arg(long, default_value_t = 0.6)]
    pub t_keep: f64,
    #[arg(long, default_value_t = 0)]
    pub min_area: usize,
    /// Collapse same-category stuff segments. Defaults to on for the argmax
    /// strategies and off otherwise.
    #[arg(long)]
    pub merge_stuff: Option<bool>,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    #[arg(long, value_parser = parse_strategy, default_value = "maskwise")]
    pub strategy: Strategy,
    #[command(flatten)]
    pub flags: MergeFlags,
    /// Prediction manifest (file or directory).
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Count unmatched predictions lying mostly on void as false positives.
    #[arg(long)]
    pub count_void_fp: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LocationArg {
    Box,
    Center,
}

impl From<LocationArg> for LocationMode {
    fn from(a: LocationArg) -> Self {
        match a {
            LocationArg::Box => LocationMode::Box,
            LocationArg::Center => LocationMode::MassCenter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lambdas(pub [f64; 3]);

impl fmt::Display for Lambdas {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.0[0], self.0[1], self.0[2])
    }
}

fn parse_lambdas(s: &str) -> Result<Lambdas, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated weights (cls,seg,det), got {s:?}"));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}"))?;
        if !(o.is_finite() && *o >= 0.0) {
            return Err(format!("weights must be finite and >= 0, got {p}"));
        }
    }
    Ok(Lambdas(out))
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse::<Strategy>().map_err(|e| e.to_string())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrategyList(pub Vec<Strategy>);

fn parse_strategies(s: &str) -> Result<StrategyList, String> {
    s.split(',').map(|p| parse_strategy(p.trim())).collect::<Result<_, _>>().map(StrategyList)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProportionArg {
    Pixels,
    Instances,
}

impl From<ProportionArg> for ProportionBase {
    fn from(a: ProportionArg) -> Self {
        match a {
            ProportionArg::Pixels => ProportionBase::Pixels,
            ProportionArg::Instances => ProportionBase::Instances,
        }
    }
}

#[derive(Debug, Args)]
pub struct AssignArgs {
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth panoptic set.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, value_enum, default_value = "box")]
    pub location_mode: LocationArg,
    /// Matching weights `cls,seg,det`.
    #[arg(long, value_parser = parse_lambdas, default_value = "2,1,1")]
    pub lambdas: Lambdas,
    /// Compare raw pixel coordinates instead of image-normalized ones.
    #[arg(long)]
    pub no_normalize: bool,
    /// Base of the per-image things/stuff loss balance reported alongside.
    #[arg(long, value_enum, default_value = "pixels")]
    pub proportion: ProportionArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// PST1 f32 tensor of shape [tokens, heads].
    #[arg(long)]
    pub attn: PathBuf,
    /// Input image height (multiple of 32).
    #[arg(long)]
    pub h: usize,
    #[arg(long)]
    pub w: usize,
    /// PST1 f32 vector of 3·heads weights followed by the bias.
    #[arg(long, conflicts_with = "head_seed")]
    pub head: Option<PathBuf>,
    /// Seed for a deterministic head when no weights are given.
    #[arg(long, default_value_t = 0)]
    pub head_seed: u64,
    /// Output PST1 probability map at H/8 × W/8.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Merged panoptic set whose segments carry source queries.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Prediction manifest; omit to stream synthetic images instead.
    #[arg(long = "in", conflicts_with = "synthetic")]
    pub input: Option<PathBuf>,
    /// Number of synthetic images to stream.
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 256)]
    pub h: usize,
    #[arg(long, default_value_t = 256)]
    pub w: usize,
    /// Masks per synthetic image.
    #[arg(long, default_value_t = 100)]
    pub masks: usize,
    #[arg(long, default_value_t = 0.2)]
    pub noise: f64,
    #[arg(long, value_parser = parse_strategies, default_value = "maskwise,argmax")]
    pub strategies: StrategyList,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[command(flatten)]
    pub flags: MergeFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(panoptic_core::Error),
}

impl From<panoptic_core::Error> for CliError {
    fn from(e: panoptic_core::Error) -> Self {
        CliError::Data(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Data(e) => e.fmt(f),
        }
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Merge(a) => commands::merge(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Assign(a) => commands::assign(&a),
        Command::Fuse(a) => commands::fuse(&a),
        Command::Stats(a) => commands::stats(&a),
        Command::Bench(a) => commands::bench(&a),
    })
}
