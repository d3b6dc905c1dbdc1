use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::detectors::ScoreKind;
use super::metrics::{auroc, fpr_at_tpr, GroupAccuracy, ScoreSet};
use crate::error::{Error, Result};

/// Name of the row averaging every OOD source.
pub const MEAN_ROW: &str = "mean";

/// Detection and classification metrics for one OOD source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OODReport {
    pub dataset: String,
    pub score_kind: ScoreKind,
    pub auroc: f64,
    pub fpr95: f64,
    pub acc: f64,
    pub group_acc: GroupAccuracy,
    pub id_count: usize,
    pub ood_count: usize,
    pub config_hash: String,
}

impl OODReport {
    pub fn from_scores(
        dataset: &str,
        scores: &ScoreSet,
        acc: f64,
        group_acc: GroupAccuracy,
        config_hash: &str,
    ) -> Result<Self> {
        Ok(Self {
            dataset: dataset.to_string(),
            score_kind: scores.score_kind,
            auroc: auroc(scores)?,
            fpr95: fpr_at_tpr(scores, 0.95)?,
            acc,
            group_acc,
            id_count: scores.id_scores.len(),
            ood_count: scores.ood_scores.len(),
            config_hash: config_hash.to_string(),
        })
    }
}

/// Unweighted mean over sources: every source counts once regardless of its
/// size.
pub fn mean_report(rows: &[OODReport]) -> Result<OODReport> {
    let first = rows.first().ok_or_else(|| Error::Empty("report rows".into()))?;
    let n = rows.len() as f64;
    Ok(OODReport {
        dataset: MEAN_ROW.to_string(),
        score_kind: first.score_kind,
        auroc: rows.iter().map(|r| r.auroc).sum::<f64>() / n,
        fpr95: rows.iter().map(|r| r.fpr95).sum::<f64>() / n,
        acc: first.acc,
        group_acc: first.group_acc,
        id_count: first.id_count,
        ood_count: rows.iter().map(|r| r.ood_count).sum(),
        config_hash: first.config_hash.clone(),
    })
}

/// Parses one decimal score per line; blank lines are skipped.
pub fn parse_scores(text: &str, context: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line.parse().map_err(|_| Error::Parse {
            context: format!("{context}:{}", i + 1),
            message: format!("not a number: {line:?}"),
        })?;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{context}:{}", i + 1)));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::Empty(format!("score file {context}")));
    }
    Ok(out)
}

pub fn read_score_file(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scores(&text, &path.display().to_string())
}

/// Writes scores one per line with round-trip precision.
pub fn write_score_file(path: &Path, scores: &[f64]) -> Result<()> {
    let mut text = String::with_capacity(scores.len() * 20);
    for s in scores {
        text.push_str(&format!("{s:?}\n"));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(name: &str, auroc: f64, fpr95: f64, ood: usize) -> OODReport {
        OODReport {
            dataset: name.into(),
            score_kind: ScoreKind::Energy,
            auroc,
            fpr95,
            acc: 0.9,
            group_acc: GroupAccuracy {
                head: Some(1.0),
                medium: None,
                tail: Some(0.5),
            },
            id_count: 10,
            ood_count: ood,
            config_hash: "abc".into(),
        }
    }

    #[test]
    fn mean_is_unweighted() {
        let m = mean_report(&[row("a", 0.9, 0.2, 1000), row("b", 0.5, 0.6, 10)]).unwrap();
        assert!((m.auroc - 0.7).abs() < 1e-15);
        assert!((m.fpr95 - 0.4).abs() < 1e-15);
        assert_eq!(m.dataset, MEAN_ROW);
        let single = mean_report(&[row("a", 0.9, 0.2, 5)]).unwrap();
        assert_eq!((single.auroc, single.fpr95), (0.9, 0.2));
        assert!(mean_report(&[]).is_err());
    }

    #[test]
    fn score_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.txt");
        let scores = vec![0.1, -3.25e-7, 1.0 / 3.0, 12345.678901234567];
        write_score_file(&path, &scores).unwrap();
        assert_eq!(read_score_file(&path).unwrap(), scores);
        assert!(parse_scores("1.0\nx\n", "t").is_err());
        assert!(parse_scores("\n\n", "t").is_err());
        assert_eq!(parse_scores(" 2.5 \n\n3\n", "t").unwrap(), vec![2.5, 3.0]);
    }

    #[test]
    fn report_json_round_trip() {
        let r = row("a", 0.123456789012345, 1.0 / 3.0, 7);
        let back: OODReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
