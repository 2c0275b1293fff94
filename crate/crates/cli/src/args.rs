use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "risurconv", version, about = "Rotation-invariant surface features and classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write per-neighborhood surface descriptors of one cloud to a binary dump.
    Extract(ExtractArgs),
    /// Train a classifier on a dataset directory and save a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint under a rotation protocol.
    Eval(EvalArgs),
    /// Check descriptor and logit invariance under random rotations and
    /// point reorderings; exits with 2 on a violation.
    InvarianceCheck(InvarianceArgs),
    /// Train and score a grid of model variants.
    Ablate(AblateArgs),
    /// Write a labeled synthetic dataset.
    Synth(SynthArgs),
}

/// Flags every subcommand takes.
#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration (sections: preset, model, train, eval, synth).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed from the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormalSource {
    /// Use the normals stored in the file.
    Given,
    /// Estimate normals from the points.
    Estimate,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub input: PathBuf,
    /// Neighbors per reference point.
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    /// Reference points chosen by farthest-point sampling.
    #[arg(long, default_value_t = 256)]
    pub refs: usize,
    #[arg(long, value_enum, default_value_t = NormalSource::Given)]
    pub normals: NormalSource,
    /// Neighborhood size for normal estimation.
    #[arg(long, default_value_t = 16)]
    pub normal_k: usize,
    /// Descriptor variant.
    #[arg(long, default_value = "standard-14")]
    pub variant: String,
    /// Write rows whose angles are undefined (as zeros) instead of failing.
    #[arg(long)]
    pub allow_degenerate: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory: one subdirectory of cloud files per class.
    #[arg(long)]
    pub data: PathBuf,
    /// Network preset when the configuration has no model section.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Checkpoint written after training.
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint of the freshly initialized network.
    #[arg(long)]
    pub init_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    Zz,
    So3so3,
    Zso3,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = ProtocolArg::Zso3)]
    pub mode: ProtocolArg,
    /// Independent rotation draws averaged into the reported accuracy.
    #[arg(long)]
    pub resamples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InvarianceArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    /// Bound on descriptor deviations (64-bit features).
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Bound on logit deviations (32-bit network).
    #[arg(long, default_value_t = 1e-4)]
    pub logit_tol: f64,
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    #[arg(long, default_value_t = 64)]
    pub refs: usize,
    /// Network to check; a randomly initialized toy network otherwise.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Measure angles on xy projections, which breaks invariance on purpose.
    #[arg(long, hide = true)]
    pub debug_corrupt_angles: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    /// descriptor, attention, surfaces, or all.
    #[arg(long, default_value = "all")]
    pub study: String,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, value_enum, default_value_t = ProtocolArg::Zso3)]
    pub mode: ProtocolArg,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub resamples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of shape classes, 1 to 5.
    #[arg(long, default_value_t = 5)]
    pub classes: usize,
    #[arg(long)]
    pub per_class: usize,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}
