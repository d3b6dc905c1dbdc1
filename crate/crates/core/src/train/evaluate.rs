use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, TrainedModel};
use super::prepare::OodInputs;
use super::run::argmax_rows;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{
    accuracy, group_accuracy, mean_report, per_class_accuracy, score_inputs, Detector, OODReport,
    ScoreSet,
};

/// Where the OOD side of a report comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum OodSource {
    /// Inputs scored by the model under evaluation.
    Inputs(OodInputs),
    /// Precomputed detector scores (higher = more ID).
    Scores { name: String, scores: Vec<f64> },
}

impl OodSource {
    pub fn name(&self) -> &str {
        match self {
            Self::Inputs(o) => &o.name,
            Self::Scores { name, .. } => name,
        }
    }
}

/// Everything an evaluation computes, including raw scores for figures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub rows: Vec<OODReport>,
    /// Unweighted mean over `rows`.
    pub mean: OODReport,
    pub per_class_acc: Vec<Option<f64>>,
    pub id_scores: Vec<f64>,
    pub ood_scores: Vec<(String, Vec<f64>)>,
}

/// Scores the ID test set and every OOD source with `detector`.
pub fn evaluate_model(
    trained: &TrainedModel,
    config_hash: &str,
    id_test: &Dataset,
    sources: &[OodSource],
    detector: &Detector,
) -> Result<Evaluation> {
    if sources.is_empty() {
        return Err(Error::Empty("OOD sources".into()));
    }
    let logits = trained.model.ensemble_logits(&id_test.inputs)?;
    let preds = argmax_rows(&logits);
    let acc = accuracy(&preds, &id_test.labels)?;
    let groups = group_accuracy(&preds, &id_test.labels, &trained.profile)?;
    let id_scores = score_inputs(&trained.model, &id_test.inputs, detector)?.to_vec();
    let mut rows = Vec::with_capacity(sources.len());
    let mut ood_scores = Vec::with_capacity(sources.len());
    for source in sources {
        let scores = match source {
            OodSource::Inputs(o) => score_inputs(&trained.model, &o.inputs, detector)?.to_vec(),
            OodSource::Scores { scores, .. } => scores.clone(),
        };
        let set = ScoreSet::new(id_scores.clone(), scores, detector.kind)?;
        rows.push(OODReport::from_scores(source.name(), &set, acc, groups, config_hash)?);
        ood_scores.push((source.name().to_string(), set.ood_scores));
    }
    Ok(Evaluation {
        mean: mean_report(&rows)?,
        rows,
        per_class_acc: per_class_accuracy(&preds, &id_test.labels, id_test.num_classes),
        id_scores,
        ood_scores,
    })
}

/// [`evaluate_model`] on a checkpoint after checking its config hash.
pub fn evaluate(
    checkpoint: &Checkpoint,
    id_test: &Dataset,
    sources: &[OodSource],
    detector: &Detector,
) -> Result<Evaluation> {
    checkpoint.verify()?;
    let trained = checkpoint.trained()?;
    if id_test.num_classes != trained.profile.num_classes() {
        return Err(Error::shape(format!(
            "test set has {} classes, checkpoint {}",
            id_test.num_classes,
            trained.profile.num_classes()
        )));
    }
    evaluate_model(&trained, &checkpoint.config_hash, id_test, sources, detector)
}
