//! Run directories: config snapshot, step and epoch logs, record and
//! checkpoint.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::prepare::{prepare_data, PreparedData};
use super::run::{fit, EpochRecord, Progress, RunRecord, StepRecord};
use crate::error::{Error, Result};

pub const CONFIG_FILE: &str = "config.toml";
pub const STEPS_FILE: &str = "steps.csv";
pub const EPOCHS_FILE: &str = "epochs.csv";
pub const RECORD_FILE: &str = "record.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// Creates `<parent>/<UTC timestamp>-<hash prefix>`, adding a numeric suffix
/// if that name is taken.
pub fn create_run_dir(parent: &Path, config_hash: &str) -> Result<PathBuf> {
    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = format!("{stamp}-{}", &config_hash[..8.min(config_hash.len())]);
    for n in 0.. {
        let name = if n == 0 { base.clone() } else { format!("{base}-{n}") };
        let dir = parent.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
    unreachable!("unbounded suffix search")
}

/// Step log row; absent components are empty cells.
#[derive(Serialize)]
struct StepRow {
    epoch: usize,
    step: usize,
    lr: f64,
    nod: f64,
    cbcl: Option<f64>,
    rcl: Option<f64>,
    total: f64,
    mean_factor: f64,
    mean_energy: f64,
    d_plus: Option<f64>,
    d_minus: Option<f64>,
    cbcl_clamped: bool,
    unseen_center: bool,
}

impl From<&StepRecord> for StepRow {
    fn from(s: &StepRecord) -> Self {
        Self {
            epoch: s.epoch,
            step: s.step,
            lr: s.lr,
            nod: s.nod,
            cbcl: s.cbcl,
            rcl: s.rcl,
            total: s.total,
            mean_factor: s.mean_factor,
            mean_energy: s.mean_energy,
            d_plus: s.d_plus,
            d_minus: s.d_minus,
            cbcl_clamped: s.cbcl_clamped,
            unseen_center: s.unseen_center,
        }
    }
}

/// Reads a step log back.
pub fn read_steps(path: &Path) -> Result<Vec<StepRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

pub fn read_epochs(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Trains into `run_dir`, streaming logs as steps complete. On divergence
/// the logs written so far stay on disk and the error is returned.
pub fn train_into(
    cfg: &RunConfig,
    data: &PreparedData,
    run_dir: &Path,
    progress: &mut dyn FnMut(Progress<'_>) -> Result<()>,
) -> Result<RunRecord> {
    let snapshot = run_dir.join(CONFIG_FILE);
    fs::write(&snapshot, cfg.to_toml_string()?).map_err(|e| Error::io(&snapshot, e))?;
    let steps_path = run_dir.join(STEPS_FILE);
    let epochs_path = run_dir.join(EPOCHS_FILE);
    let mut steps = csv::Writer::from_writer(File::create(&steps_path).map_err(|e| Error::io(&steps_path, e))?);
    let mut epochs = csv::Writer::from_writer(File::create(&epochs_path).map_err(|e| Error::io(&epochs_path, e))?);
    let result = fit(cfg, data, &mut |p| {
        match &p {
            Progress::Step(s) => steps.serialize(StepRow::from(*s))?,
            Progress::Epoch(e) => {
                epochs.serialize(*e)?;
                epochs.flush().map_err(|err| Error::io(&epochs_path, err))?;
                steps.flush().map_err(|err| Error::io(&steps_path, err))?;
            }
        }
        progress(p)
    });
    steps.flush().map_err(|e| Error::io(&steps_path, e))?;
    epochs.flush().map_err(|e| Error::io(&epochs_path, e))?;
    let (trained, mut record) = result?;

    let ck_path = run_dir.join(CHECKPOINT_FILE);
    Checkpoint::new(cfg, &trained).save(&ck_path)?;
    record.run_dir = Some(run_dir.to_path_buf());
    record.checkpoint = Some(ck_path);
    let rec_path = run_dir.join(RECORD_FILE);
    fs::write(&rec_path, serde_json::to_string_pretty(&record)?).map_err(|e| Error::io(&rec_path, e))?;
    Ok(record)
}

/// Prepares data, creates a timestamped run directory under
/// `cfg.out_dir` and trains into it.
pub fn train(cfg: &RunConfig, progress: &mut dyn FnMut(Progress<'_>) -> Result<()>) -> Result<RunRecord> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    let dir = create_run_dir(&cfg.out_dir, &cfg.hash())?;
    train_into(cfg, &data, &dir, progress)
}
