use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rcsteer::steering::Fallback;

mod diagnose;
mod io;
mod probe;
mod sae;

#[derive(Parser, Debug)]
#[command(name = "rcsteer", version, about = "Residual-correctness probing and probability steering")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Seed for splits, initialization and shuffling.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Reliability bins for ECE / cwECE.
    #[arg(long, global = true, default_value_t = 25)]
    pub bins: usize,
    /// Length-normalize option log-likelihoods before the softmax.
    #[arg(long, global = true)]
    pub length_normalize: bool,
    /// Distribution to return when steering clamps every option to zero.
    #[arg(long, global = true, value_enum, default_value_t = FallbackArg::Unsteered)]
    pub fallback: FallbackArg,
    /// Metric scale in report.json.
    #[arg(long, global = true, value_enum, default_value_t = ReportScale::Both)]
    pub report_scale: ReportScale,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum FallbackArg {
    Unsteered,
    Uniform,
}

impl From<FallbackArg> for Fallback {
    fn from(f: FallbackArg) -> Self {
        match f {
            FallbackArg::Unsteered => Fallback::Unsteered,
            FallbackArg::Uniform => Fallback::Uniform,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportScale {
    Raw,
    X100,
    Both,
}

/// Which questions of a dataset to use.
#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    All,
    Train,
    Val,
    Test,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic task (optionally a layer stack or a head grid).
    Synth(probe::SynthArgs),
    /// Grid-search and train a residual probe.
    TrainProbe(probe::TrainProbeArgs),
    /// Steer a dataset with a trained probe.
    Steer(probe::SteerArgs),
    /// Sweep γ per layer and select the steering layer.
    Sweep(probe::SweepArgs),
    /// Concatenate per-layer datasets along the feature axis.
    Concat(probe::ConcatArgs),
    /// Calibration report of the model's own option distribution.
    Eval(probe::EvalArgs),
    /// Sparse autoencoder training, ablation and steering.
    #[command(subcommand)]
    Sae(sae::SaeCmd),
    /// Head probing, PCA dimensionality curves and layer reports.
    #[command(subcommand)]
    Diagnose(diagnose::DiagnoseCmd),
}

/// Comma-separated split fractions, e.g. `0.7,0.15,0.15`.
#[derive(Args, Debug, Clone)]
pub struct SplitArgs {
    /// Train/val/test fractions; the shuffle uses --seed.
    #[arg(long, value_delimiter = ',', default_values_t = [0.7, 0.15, 0.15])]
    pub split: Vec<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct DatasetArg {
    /// ACTV1 dataset directory.
    #[arg(long)]
    pub dataset: PathBuf,
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("CORAL_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| anyhow::anyhow!("CORAL_THREADS must be a positive integer, got {v:?}"))?;
        if n == 0 {
            anyhow::bail!("CORAL_THREADS must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads()?;
    let c = &cli.common;
    match cli.cmd {
        Cmd::Synth(a) => probe::synth(c, a),
        Cmd::TrainProbe(a) => probe::train_probe(c, a),
        Cmd::Steer(a) => probe::steer(c, a),
        Cmd::Sweep(a) => probe::sweep(c, a),
        Cmd::Concat(a) => probe::concat(a),
        Cmd::Eval(a) => probe::eval(c, a),
        Cmd::Sae(s) => sae::run(c, s),
        Cmd::Diagnose(d) => diagnose::run(c, d),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
