//! Threshold-free and fixed-TPR detection metrics, and accuracy by
//! frequency group.

use serde::{Deserialize, Serialize};

use super::detectors::ScoreKind;
use crate::data::ClassProfile;
use crate::error::{ensure_finite, Error, Result};

/// Detector scores of ID and OOD samples; higher means more ID.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub id_scores: Vec<f64>,
    pub ood_scores: Vec<f64>,
    pub score_kind: ScoreKind,
}

impl ScoreSet {
    pub fn new(id_scores: Vec<f64>, ood_scores: Vec<f64>, score_kind: ScoreKind) -> Result<Self> {
        ensure_finite(&id_scores, "ID scores")?;
        ensure_finite(&ood_scores, "OOD scores")?;
        Ok(Self {
            id_scores,
            ood_scores,
            score_kind,
        })
    }

    fn check_sides(&self) -> Result<()> {
        if self.id_scores.is_empty() {
            return Err(Error::Empty("ID scores".into()));
        }
        if self.ood_scores.is_empty() {
            return Err(Error::Empty("OOD scores".into()));
        }
        Ok(())
    }
}

/// `P(id > ood) + P(id = ood) / 2` via midranks.
pub fn auroc(scores: &ScoreSet) -> Result<f64> {
    scores.check_sides()?;
    let (n, m) = (scores.id_scores.len(), scores.ood_scores.len());
    let mut all: Vec<(f64, bool)> = scores
        .id_scores
        .iter()
        .map(|&s| (s, true))
        .chain(scores.ood_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j share their mean
        let midrank = (i + 1 + j) as f64 / 2.0;
        rank_sum += midrank * all[i..j].iter().filter(|e| e.1).count() as f64;
        i = j;
    }
    let u = rank_sum - (n * (n + 1)) as f64 / 2.0;
    Ok(u / (n as f64 * m as f64))
}

/// Fraction of OOD scores `>= theta`, where `theta` is the largest threshold
/// keeping at least `tpr_target` of the ID scores `>= theta`.
pub fn fpr_at_tpr(scores: &ScoreSet, tpr_target: f64) -> Result<f64> {
    scores.check_sides()?;
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(Error::invalid(format!("tpr target {tpr_target} outside (0, 1]")));
    }
    let mut id = scores.id_scores.clone();
    id.sort_by(|a, b| b.total_cmp(a));
    let n = id.len() as f64;
    // smallest k with k/n >= target; tolerate rounding in k/n
    let k = ((tpr_target * n) - 1e-9).ceil().max(1.0) as usize;
    let theta = id[k.min(id.len()) - 1];
    let fp = scores.ood_scores.iter().filter(|&&s| s >= theta).count();
    Ok(fp as f64 / scores.ood_scores.len() as f64)
}

/// Frequency group of a class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Head,
    Medium,
    Tail,
}

/// Group of every class: classes sorted by training count (descending, ties
/// by index), rank `r` goes to tercile `floor(3r / C)`.
pub fn class_groups(profile: &ClassProfile) -> Vec<Group> {
    let c = profile.num_classes();
    let mut groups = vec![Group::Head; c];
    for (rank, &class) in profile.classes_by_frequency().iter().enumerate() {
        groups[class] = match 3 * rank / c {
            0 => Group::Head,
            1 => Group::Medium,
            _ => Group::Tail,
        };
    }
    groups
}

/// Top-1 accuracy per frequency group; `None` for a group without test
/// samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub head: Option<f64>,
    pub medium: Option<f64>,
    pub tail: Option<f64>,
}

pub fn group_accuracy(predictions: &[usize], labels: &[usize], profile: &ClassProfile) -> Result<GroupAccuracy> {
    if predictions.len() != labels.len() {
        return Err(Error::shape("predictions and labels differ in length"));
    }
    let groups = class_groups(profile);
    let mut hit = [0usize; 3];
    let mut total = [0usize; 3];
    for (&p, &y) in predictions.iter().zip(labels) {
        let g = *groups
            .get(y)
            .ok_or_else(|| Error::invalid(format!("label {y} outside the profile")))? as usize;
        total[g] += 1;
        hit[g] += usize::from(p == y);
    }
    let rate = |g: usize| (total[g] > 0).then(|| hit[g] as f64 / total[g] as f64);
    Ok(GroupAccuracy {
        head: rate(0),
        medium: rate(1),
        tail: rate(2),
    })
}

/// Overall top-1 accuracy.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::shape("predictions and labels differ in length"));
    }
    if labels.is_empty() {
        return Err(Error::Empty("labels".into()));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Per-class accuracy; `None` for classes absent from `labels`.
pub fn per_class_accuracy(predictions: &[usize], labels: &[usize], num_classes: usize) -> Vec<Option<f64>> {
    let mut hit = vec![0usize; num_classes];
    let mut total = vec![0usize; num_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        if y < num_classes {
            total[y] += 1;
            hit[y] += usize::from(p == y);
        }
    }
    hit.iter()
        .zip(&total)
        .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
        .collect()
}

/// ROC curve points `(fpr, tpr)` from the strictest to the loosest threshold,
/// starting at `(0, 0)`.
pub fn roc_curve(scores: &ScoreSet) -> Result<Vec<(f64, f64)>> {
    scores.check_sides()?;
    let mut thresholds: Vec<f64> = scores.id_scores.iter().chain(&scores.ood_scores).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut id = scores.id_scores.clone();
    let mut ood = scores.ood_scores.clone();
    id.sort_by(|a, b| b.total_cmp(a));
    ood.sort_by(|a, b| b.total_cmp(a));
    let (n, m) = (id.len() as f64, ood.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut points = vec![(0.0, 0.0)];
    for t in thresholds {
        while i < id.len() && id[i] >= t {
            i += 1;
        }
        while j < ood.len() && ood[j] >= t {
            j += 1;
        }
        points.push((j as f64 / m, i as f64 / n));
    }
    Ok(points)
}
