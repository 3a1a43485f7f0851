//! `derlab` command-line interface.

mod commands;
mod figures;
mod manifest;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "derlab", version, about = "Deep evidential regression experiments")]
struct Cli {
    /// Root for output directories when --out is not given.
    #[arg(long, global = true, env = "DERLAB_OUT", default_value = "derlab-out")]
    out_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset (CSV plus metadata sidecar).
    Generate(GenerateArgs),
    /// Train one or more seeds and write checkpoints, traces and predictions.
    Train(TrainArgs),
    /// Tabulate predictions of trained checkpoints on a grid.
    Evaluate(EvaluateArgs),
    /// Calibration, cutoff, entropy and asymmetry reports.
    Analyze(AnalyzeArgs),
    /// Regenerate the data behind a figure.
    Reproduce(ReproduceArgs),
    /// Filter or aggregate a per-seed trace file.
    TraceExport(TraceExportArgs),
    /// Re-hash the artifacts listed in a run directory's manifest.
    Verify(VerifyArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeneratorName {
    Cubic,
    Pulse,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    pub generator: GeneratorName,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cubic only.
    #[arg(long, default_value_t = -4.0, allow_negative_numbers = true)]
    pub x_lo: f64,
    /// Cubic only.
    #[arg(long, default_value_t = 4.0, allow_negative_numbers = true)]
    pub x_hi: f64,
    /// Cubic only.
    #[arg(long, default_value_t = 3.0)]
    pub noise_std: f64,
    /// Output CSV path; the sidecar is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerName {
    Adam,
    Momentum,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceOutput {
    /// Cross-seed mean and std only.
    Aggregate,
    /// Aggregate plus every seed's rows.
    PerSeed,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Starting point for every other flag.
    #[arg(long, default_value = "cubic-der", value_parser = clap::builder::PossibleValuesParser::new(derlab::experiment::PRESET_NAMES))]
    pub preset: String,
    /// Full config file (as written to config.toml by a previous run); replaces the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// der-original, der-normalized, gaussian-alt or naive-extension.
    #[arg(long)]
    pub loss: Option<derlab::losses::LossKind>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Residual exponent of the normalized regularizer (1 or 2).
    #[arg(long)]
    pub p: Option<derlab::losses::ResidualPower>,
    /// two-nu-plus-alpha or nu-plus-two-alpha.
    #[arg(long)]
    pub phi: Option<derlab::losses::PhiConvention>,
    /// Treat w_St in the normalized regularizer as a constant.
    #[arg(long)]
    pub detach_width: bool,
    #[arg(long)]
    pub optimizer: Option<OptimizerName>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Momentum coefficient for --optimizer momentum.
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Per-epoch multiplicative learning-rate decay (Adam only).
    #[arg(long)]
    pub decay: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// `full` or a sample count.
    #[arg(long)]
    pub batch_size: Option<String>,
    /// Hidden widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub activation: Option<derlab::network::Activation>,
    /// Train seeds 0..N.
    #[arg(long, conflicts_with = "seed_list")]
    pub seeds: Option<u64>,
    /// Explicit seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub seed_list: Option<Vec<u64>>,
    /// Trace cadence in epochs; 0 disables tracing.
    #[arg(long)]
    pub trace_every: Option<usize>,
    #[arg(long, default_value = "aggregate")]
    pub traces: TraceOutput,
    /// Train every seed on this dataset instead of regenerating one per seed.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Run directory written by `train`.
    #[arg(long, required_unless_present = "checkpoint")]
    pub run: Option<PathBuf>,
    /// A single checkpoint instead of a run directory.
    #[arg(long, conflicts_with = "run")]
    pub checkpoint: Option<PathBuf>,
    /// Head used with --checkpoint.
    #[arg(long, default_value = "evidential")]
    pub head: HeadName,
    #[arg(long, allow_negative_numbers = true)]
    pub lo: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub hi: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
    /// Output CSV; defaults to evaluation.csv in the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadName {
    Evidential,
    Gaussian,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Run directory written by `train`.
    #[arg(long, required_unless_present = "selftest")]
    pub run: Option<PathBuf>,
    /// Check the calibration code on a perfectly specified synthetic cohort.
    #[arg(long, conflicts_with = "run")]
    pub selftest: bool,
    /// Cohort size for --selftest.
    #[arg(long, default_value_t = 100_000)]
    pub n: usize,
    /// Error metric of the cutoff curves.
    #[arg(long, default_value = "absolute")]
    pub metric: derlab::analysis::ErrorMetric,
    /// Seed of the held-out test sets (offset by the run seed).
    #[arg(long, default_value_t = 4242)]
    pub test_seed: u64,
    /// Half-width of each side of the pulse asymmetry window.
    #[arg(long, default_value_t = 0.25)]
    pub window: f64,
    /// Distance from the pulse centre excluded from both sides.
    #[arg(long, default_value_t = 0.02)]
    pub gap: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum FigureId {
    Fig1a,
    Fig1b,
    Fig1c,
    Fig2,
    Pulse,
    Fig4,
    Fig5,
}

#[derive(Args, Debug)]
pub struct ReproduceArgs {
    pub figure: FigureId,
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TraceExportArgs {
    /// Per-seed trace CSV (traces.csv of a run).
    #[arg(long)]
    pub input: PathBuf,
    /// Keep only these epochs.
    #[arg(long, value_delimiter = ',')]
    pub epochs: Option<Vec<usize>>,
    /// Keep only these grid points.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub x: Option<Vec<f64>>,
    /// Emit cross-seed mean/std instead of per-seed rows.
    #[arg(long)]
    pub aggregate: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    pub dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a, &cli.out_root),
        Command::Train(a) => commands::train(&a, &cli.out_root),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Analyze(a) => commands::analyze(&a),
        Command::Reproduce(a) => figures::reproduce(&a, &cli.out_root),
        Command::TraceExport(a) => commands::trace_export(&a),
        Command::Verify(a) => commands::verify(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
