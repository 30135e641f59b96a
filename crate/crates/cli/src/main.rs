//! `imac`: command-line front end for the IMAC co-processor simulator.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error,
//! 3 numerical or training failure (including failed self-checks).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use imac_core::circuits::Fidelity;

#[derive(Debug, Parser)]
#[command(name = "imac", version, about = "SOT-MRAM in-memory analog computing co-processor simulator")]
pub struct Cli {
    /// TOML run configuration; every key is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for reports, checkpoints and traces.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for training and batch evaluation.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate the MTJ resistance model for the active device parameters.
    Devcheck {
        /// Read bias for the bias-dependent rows, in volts.
        #[arg(long, default_value_t = 0.65)]
        bias: f64,
    },
    /// Train the binarized MLP and save its parameters.
    TrainMlp(DataArgs),
    /// Two-step CNN training followed by a CPU-IMAC pipeline evaluation.
    TrainCnn {
        #[arg(long, value_enum, default_value_t = Model::Lenet)]
        model: Model,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Classify one test image or the whole test set.
    Infer {
        #[command(flatten)]
        source: ParamSource,
        #[arg(long, value_enum)]
        fidelity: Option<FidelityArg>,
        /// ADC resolution in bits, or `off` to read analog outputs.
        #[arg(long)]
        adc_bits: Option<AdcBits>,
        /// Test-set index of a single image.
        #[arg(long)]
        index: Option<usize>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Run the CPU-IMAC pipeline on one image and write its protocol trace.
    Pipeline {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Also evaluate the test set and check every trace.
        #[arg(long)]
        evaluate: bool,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Speedup and energy report for the CNN workloads.
    Perf(PerfArgs),
    /// Write the SPICE-style netlist of a trained network.
    ExportNetlist {
        #[command(flatten)]
        source: ParamSource,
        /// Output file; defaults to `<out>/network.sp`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare the simulator against the brute-force references.
    Selftest {
        /// Smaller case counts.
        #[arg(long)]
        quick: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Model {
    Lenet,
    ReducedVgg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetArg {
    Mnist,
    Cifar10,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FidelityArg {
    Ideal,
    Circuit,
}

impl From<FidelityArg> for Fidelity {
    fn from(f: FidelityArg) -> Self {
        match f {
            FidelityArg::Ideal => Fidelity::Ideal,
            FidelityArg::Circuit => Fidelity::Circuit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdcBits {
    Off,
    Bits(u8),
}

impl std::str::FromStr for AdcBits {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "off" {
            return Ok(AdcBits::Off);
        }
        s.parse().map(AdcBits::Bits).map_err(|_| format!("expected a bit count or `off`, got `{s}`"))
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Dataset; defaults to MNIST, or CIFAR-10 for the reduced VGG.
    #[arg(long, value_enum)]
    pub dataset: Option<DatasetArg>,
    /// Dataset directory, overriding the configuration and environment.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Use only the first N training images.
    #[arg(long)]
    pub train_limit: Option<usize>,
    /// Use only the first N test images.
    #[arg(long)]
    pub test_limit: Option<usize>,
    /// Images per split of the synthetic dataset.
    #[arg(long, default_value_t = 600)]
    pub synthetic_samples: usize,
}

#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct ParamSource {
    /// Binarized parameter file of an MLP.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Checkpoint of an MLP or of a CNN with a binarized head.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PerfArgs {
    /// Fit the workload profiles to target speedup and energy reduction.
    #[arg(long)]
    pub calibrate: bool,
    /// Workloads to report; defaults to LeNet when a target is given and
    /// to both otherwise.
    #[arg(long, value_enum)]
    pub model: Option<PerfModel>,
    /// Target speedup as a fraction, e.g. 0.112.
    #[arg(long)]
    pub target_speedup: Option<f64>,
    /// Target energy reduction as a fraction, e.g. 0.10.
    #[arg(long)]
    pub target_energy: Option<f64>,
    /// IMAC energy per inference in joules.
    #[arg(long)]
    pub imac_energy: Option<f64>,
    /// Accuracy difference to show in the summary table, as a fraction.
    #[arg(long, allow_hyphen_values = true)]
    pub accuracy_diff: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PerfModel {
    Lenet,
    Vgg,
    All,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] imac_core::Error),
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use imac_core::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(E::TrainingDiverged { .. } | E::Infeasible(_)) => 3,
            CliError::Core(_) => 2,
            CliError::CheckFailed(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
