use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ricasso_core::eval::ScoreKind;

#[derive(Debug, Parser)]
#[command(name = "ricasso", version, about = "Long-tailed classification with OOD detection from mixed samples")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model into a new timestamped run directory.
    Train(TrainArgs),
    /// Score a checkpoint against OOD sources and write a report bundle.
    Eval(EvalArgs),
    /// Run the component ablation grid and write its table.
    Ablate(AblateArgs),
    /// Regenerate tables and figures of a bundle from its raw data files.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed of the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Parent directory of the run directory; overrides `out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DetectorArg {
    Msp,
    Energy,
    Odin,
}

impl From<DetectorArg> for ScoreKind {
    fn from(d: DetectorArg) -> Self {
        match d {
            DetectorArg::Msp => ScoreKind::Msp,
            DetectorArg::Energy => ScoreKind::Energy,
            DetectorArg::Odin => ScoreKind::Odin,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// OOD source: a file of scores (one per line), a directory of images,
    /// or the name of an OOD set in the checkpoint's config. Repeatable;
    /// defaults to every configured set.
    #[arg(long)]
    pub ood: Vec<String>,
    /// Detector; defaults to the one in the checkpoint's config.
    #[arg(long, value_enum)]
    pub detector: Option<DetectorArg>,
    /// Bundle directory; defaults to `eval-<detector>` beside the checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write tables only.
    #[arg(long)]
    pub no_figures: bool,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    /// Run configuration (TOML); `[ablation] rows` selects the grid.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Parent directory of the bundle; overrides `out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub no_figures: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Bundle directory written by `eval` or `ablate`.
    #[arg(long)]
    pub out: PathBuf,
}
