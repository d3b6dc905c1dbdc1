//! Training harness: configuration, schedule, the training loop, ablation
//! grid, checkpoints and evaluation.

mod ablation;
mod artifacts;
mod checkpoint;
mod config;
mod evaluate;
mod optim;
mod prepare;
mod reference;
mod run;

pub use ablation::{default_grid, run_ablation_grid, AblationResult, AblationToggles};
pub use artifacts::{
    create_run_dir, read_epochs, read_steps, train, train_into, CHECKPOINT_FILE, CONFIG_FILE,
    EPOCHS_FILE, RECORD_FILE, STEPS_FILE,
};
pub use checkpoint::{Checkpoint, TrainedModel};
pub use config::{
    lr_at, AblationConfig, DataConfig, Decay, EvalConfig, ImageFolderConfig, ModelConfig,
    NamedOod, OptimConfig, RunConfig, SyntheticConfig,
};
pub use evaluate::{evaluate, evaluate_model, Evaluation, OodSource};
pub use optim::Sgd;
pub use prepare::{prepare_data, synthetic_task, OodInputs, PreparedData};
pub use reference::reference_static_la_trace;
pub use run::{
    argmax_rows, epoch_batches, fit, init_model, model_spec, validate, EpochRecord, Progress,
    RunRecord, StepRecord,
};
