use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use dualcp::calibrator::Activation;
use dualcp::{Architecture, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "dualcp",
    version,
    about = "Dual-level concept prototypes for domain-incremental learning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-domain dataset with a known class grouping.
    Synth(SynthArgs),
    /// Build a prototype bank from class guidance vectors.
    Prototypes(PrototypeArgs),
    /// Train one calibrator per domain, in domain order.
    Train(TrainArgs),
    /// Evaluate a trained model on a test set.
    Eval(EvalArgs),
    /// Run the numerical self-check suites.
    Verify(VerifyArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    pub classes: usize,
    #[arg(long, default_value_t = 3)]
    pub domains: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Training samples per class and domain.
    #[arg(long, default_value_t = 50)]
    pub per_class: usize,
    /// Test samples per class and domain.
    #[arg(long, default_value_t = 20)]
    pub test_per_class: usize,
    /// Comma-separated group sizes summing to --classes.
    #[arg(long, value_delimiter = ',', default_values_t = [4, 4, 3, 3, 2, 2, 1, 1])]
    pub groups: Vec<usize>,
    /// Cosine between guidance vectors of the same group.
    #[arg(long, default_value_t = 0.9)]
    pub intra_cosine: f64,
    #[arg(long, default_value_t = 1.0)]
    pub domain_shift: f64,
    #[arg(long, default_value_t = 0.05)]
    pub class_noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PrototypeArgs {
    /// Guidance container (one row per class).
    #[arg(
        long,
        required_unless_present = "embeddings",
        conflicts_with = "embeddings"
    )]
    pub guidance: Option<PathBuf>,
    /// Use class means of the first domain of this embedding file as guidance.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Similarity threshold for grouping classes.
    #[arg(long, default_value_t = 0.85)]
    pub p: f64,
    /// Build single-level prototypes only.
    #[arg(long)]
    pub vanilla: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationArg {
    Silu,
    Tanh,
}

#[derive(Debug, Args, Serialize)]
pub struct Hyper {
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: u64,
    #[arg(long, default_value_t = 128, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch: u64,
    #[arg(long, default_value_t = 2e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Initialise each domain's calibrator from the previous one.
    #[arg(long)]
    pub warm_start: bool,
    /// Build domain centroids from unit-normalized features.
    #[arg(long)]
    pub normalized_centroids: bool,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..=3))]
    pub layers: u64,
    #[arg(long, default_value_t = 1.0)]
    pub hidden_mult: f64,
    #[arg(long, value_enum, default_value_t = ActivationArg::Silu)]
    pub activation: ActivationArg,
    /// Add an identity skip connection to the calibrator MLPs.
    #[arg(long)]
    pub skip: bool,
}

impl Hyper {
    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            alpha: self.alpha,
            lr0: self.lr,
            epochs: self.epochs as usize,
            batch_size: self.batch as usize,
            weight_decay: self.weight_decay,
            momentum: self.momentum,
            seed: self.seed,
            warm_start: self.warm_start,
            normalized_centroids: self.normalized_centroids,
            arch: Architecture {
                layers: self.layers as usize,
                hidden_mult: self.hidden_mult,
                activation: match self.activation {
                    ActivationArg::Silu => Activation::Silu,
                    ActivationArg::Tanh => Activation::Tanh,
                },
                skip: self.skip,
            },
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Training embeddings.
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub bank: PathBuf,
    #[command(flatten)]
    pub hyper: Hyper,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Test embeddings.
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub bank: PathBuf,
    /// Model checkpoint written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Also write per-row predictions to predictions.csv.
    #[arg(long)]
    pub csv: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the suite results as JSON into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
