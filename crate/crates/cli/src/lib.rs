//! Command-line front end: `train`, `eval`, `ablate` and `report`, plus the
//! table and figure writers they share.

pub mod args;
pub mod commands;
pub mod error;
pub mod figures;
pub mod tables;

use std::io::Write;

pub use ricasso_core as core;
pub use ricasso_core::eval::{Detector, OODReport, ScoreKind};
pub use ricasso_core::train::{AblationResult, AblationToggles, Checkpoint, RunConfig, RunRecord};
pub use ricasso_core::{Error, Result};

pub use args::{AblateArgs, Cli, Command, DetectorArg, EvalArgs, ReportArgs, TrainArgs};
pub use commands::{cmd_ablate, cmd_eval, cmd_report, cmd_train, Provenance, ReportBundle};
pub use error::{CliError, CliResult, EXIT_CHECKPOINT, EXIT_CONFIG, EXIT_DIVERGED, EXIT_FAILURE, EXIT_OK};

/// Runs one parsed command line, writing human-readable output to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> CliResult<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a, out).map(|_| ()),
        Command::Eval(a) => cmd_eval(a, out).map(|_| ()),
        Command::Ablate(a) => cmd_ablate(a, out).map(|_| ()),
        Command::Report(a) => cmd_report(a, out).map(|_| ()),
    }
}
