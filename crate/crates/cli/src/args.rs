use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use redense::data::SyntheticKind;
use redense::nn::{Activation, Loss, Optimizer};

#[derive(Parser, Debug)]
#[command(
    name = "redense",
    version,
    about = "Train feedforward classifiers and boost them with a norm-constrained random ReLU head"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Train a base MLP and write model, curve, and manifest.
    Train(TrainArgs),
    /// Export last-layer features of a trained model as feature bundles.
    Features(FeaturesArgs),
    /// Fit a ReDense head on a feature bundle.
    Redense(RedenseArgs),
    /// Fit ReDense heads over a grid of widths and seeds.
    SweepM(SweepArgs),
    /// Report loss and accuracy of a model, with and without its ReDense block.
    Eval(EvalArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Features(_) => "features",
            Command::Redense(_) => "redense",
            Command::SweepM(_) => "sweep-m",
            Command::Eval(_) => "eval",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Command::Train(a) => a.seed,
            Command::Features(a) => a.data.split_seed,
            Command::Redense(a) => a.seed,
            Command::SweepM(a) => a.seed,
            Command::Eval(a) => a.data.split_seed,
        }
    }
}

/// Where examples come from. Exactly one source must be given.
#[derive(Args, Debug, Clone, Serialize)]
pub struct DataArgs {
    /// Generate a synthetic dataset: blobs or moons.
    #[arg(long, value_name = "KIND")]
    pub synthetic: Option<SyntheticKind>,
    #[arg(long, default_value_t = 600)]
    pub samples: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// Standard deviation of the synthetic noise.
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    /// Seed of the synthetic generator.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,

    /// CSV file with a header row; the last column is the integer label.
    #[arg(long, value_name = "PATH")]
    pub csv: Option<PathBuf>,
    /// Class count for CSV labels (default: max label + 1).
    #[arg(long)]
    pub csv_classes: Option<usize>,

    #[arg(long, value_name = "PATH", requires = "idx_labels")]
    pub idx_images: Option<PathBuf>,
    #[arg(long, value_name = "PATH", requires = "idx_images")]
    pub idx_labels: Option<PathBuf>,
    /// Held-out IDX pair; when given, the training files are not split.
    #[arg(long, value_name = "PATH", requires_all = ["idx_images", "test_idx_labels"])]
    pub test_idx_images: Option<PathBuf>,
    #[arg(long, value_name = "PATH", requires = "test_idx_images")]
    pub test_idx_labels: Option<PathBuf>,

    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    pub validation_fraction: f64,
    /// Seed of the train/validation/test shuffle.
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// Standardize every column with training-split statistics.
    #[arg(long)]
    pub standardize: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

impl From<OptimizerArg> for Optimizer {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::Adam => Optimizer::adam(),
            OptimizerArg::Sgd => Optimizer::Sgd,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [64])]
    pub hidden: Vec<usize>,
    /// relu, leaky_relu[:slope], or identity.
    #[arg(long, default_value = "relu")]
    pub activation: Activation,
    /// ce, mse, poisson, huber, or huber:<delta>.
    #[arg(long, default_value = "ce")]
    pub loss: Loss,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
    #[arg(long, env = "REDENSE_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct FeaturesArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct HeadArgs {
    /// Training feature bundle.
    #[arg(long, value_name = "PATH")]
    pub bundle: PathBuf,
    /// Held-out feature bundle, evaluated after every epoch.
    #[arg(long, value_name = "PATH")]
    pub test_bundle: Option<PathBuf>,
    #[arg(long, default_value_t = redense::redense::DEFAULT_LEARNING_RATE)]
    pub lr: f64,
    #[arg(long, default_value_t = redense::redense::DEFAULT_EPOCHS)]
    pub epochs: usize,
    /// Mini-batch size (default: full batch).
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct RedenseArgs {
    #[command(flatten)]
    pub head: HeadArgs,
    /// Projection width (default: the bundle's feature width n).
    #[arg(long)]
    pub m: Option<usize>,
    /// Model to extend with the fitted block; without it a standalone head file is written.
    #[arg(long, value_name = "PATH")]
    pub model: Option<PathBuf>,
    #[arg(long, env = "REDENSE_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub head: HeadArgs,
    /// Widths to try: integers or multiples of n such as `n` and `2n`.
    #[arg(long, value_delimiter = ',', default_values_t = ["n".to_string(), "2n".to_string()])]
    pub m: Vec<String>,
    /// Number of seeds per width; seeds run from --seed upward.
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    #[arg(long, env = "REDENSE_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Train,
    Validation,
    Test,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    /// Evaluate a feature bundle instead of raw data (needs a ReDense block).
    #[arg(long, value_name = "PATH", conflicts_with_all = ["synthetic", "csv", "idx_images"])]
    pub bundle: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}
