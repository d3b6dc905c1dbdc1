use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::evaluate::{evaluate_model, Evaluation, OodSource};
use super::prepare::{prepare_data, PreparedData};
use super::run::{fit, Progress, RunRecord};
use crate::error::{Error, Result};
use crate::eval::Detector;
use crate::losses::LossConfig;

/// Which components one ablation row enables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationToggles {
    pub nod: bool,
    pub rcl: bool,
    pub aala: bool,
    pub cbcl: bool,
}

impl AblationToggles {
    pub const fn new(nod: bool, rcl: bool, aala: bool, cbcl: bool) -> Self {
        Self { nod, rcl, aala, cbcl }
    }

    pub fn apply(&self, base: &LossConfig) -> LossConfig {
        LossConfig {
            nod_enabled: self.nod,
            rcl_enabled: self.rcl,
            aala_enabled: self.aala,
            cbcl_enabled: self.cbcl,
            ..base.clone()
        }
    }

    /// `NOD/RCL/AALA/CBCL` as four 0/1 digits.
    pub fn code(&self) -> String {
        [self.nod, self.rcl, self.aala, self.cbcl]
            .iter()
            .map(|&b| if b { '1' } else { '0' })
            .collect()
    }

    pub fn from_code(code: &str) -> Result<Self> {
        let bits: Vec<bool> = code
            .chars()
            .map(|ch| match ch {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(Error::invalid(format!("ablation code {code:?} must be four 0/1 digits"))),
            })
            .collect::<Result<_>>()?;
        match bits[..] {
            [nod, rcl, aala, cbcl] => Ok(Self::new(nod, rcl, aala, cbcl)),
            _ => Err(Error::invalid(format!("ablation code {code:?} must be four 0/1 digits"))),
        }
    }
}

/// The eight rows of the reference ablation table, in its order.
pub fn default_grid() -> Vec<AblationToggles> {
    [
        "0000", "0010", "0001", "0011", "1100", "1101", "1110", "1111",
    ]
    .iter()
    .map(|c| AblationToggles::from_code(c).expect("valid code"))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub toggles: AblationToggles,
    pub acc: f64,
    /// Unweighted mean over OOD sources.
    pub auroc: f64,
    pub fpr95: f64,
    pub tail_acc: Option<f64>,
    pub record: RunRecord,
    pub evaluation: Evaluation,
}

/// One run per toggle row on shared data and seed, each evaluated on the
/// test split against every configured OOD set.
pub fn run_ablation_grid(
    base: &RunConfig,
    toggles: &[AblationToggles],
    progress: &mut dyn FnMut(&AblationToggles, Progress<'_>) -> Result<()>,
) -> Result<Vec<AblationResult>> {
    if toggles.is_empty() {
        return Err(Error::Empty("ablation grid".into()));
    }
    let data = prepare_data(base)?;
    toggles
        .iter()
        .map(|t| run_row(base, &data, t, progress))
        .collect()
}

fn run_row(
    base: &RunConfig,
    data: &PreparedData,
    toggles: &AblationToggles,
    progress: &mut dyn FnMut(&AblationToggles, Progress<'_>) -> Result<()>,
) -> Result<AblationResult> {
    let cfg = RunConfig {
        loss: toggles.apply(&base.loss),
        ..base.clone()
    };
    let (trained, record) = fit(&cfg, data, &mut |p| progress(toggles, p))?;
    let sources: Vec<OodSource> = data.ood.iter().cloned().map(OodSource::Inputs).collect();
    let detector = Detector {
        kind: cfg.eval.detector,
        tau: cfg.eval.tau,
        odin: cfg.eval.odin,
    };
    let evaluation = evaluate_model(&trained, &record.config_hash, &data.test, &sources, &detector)?;
    Ok(AblationResult {
        toggles: *toggles,
        acc: evaluation.mean.acc,
        auroc: evaluation.mean.auroc,
        fpr95: evaluation.mean.fpr95,
        tail_acc: evaluation.mean.group_acc.tail,
        record,
        evaluation,
    })
}
