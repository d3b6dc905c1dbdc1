//! Metric tables: full-precision CSV for machines, two-decimal percentage
//! text for people.

use std::path::Path;

use serde::{Deserialize, Serialize};

use ricasso_core::eval::{GroupAccuracy, OODReport, ScoreKind};
use ricasso_core::train::{AblationResult, AblationToggles};

use crate::error::{CliError, CliResult};

/// One flat CSV row of an [`OODReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub score_kind: ScoreKind,
    pub auroc: f64,
    pub fpr95: f64,
    pub acc: f64,
    pub head_acc: Option<f64>,
    pub medium_acc: Option<f64>,
    pub tail_acc: Option<f64>,
    pub id_count: usize,
    pub ood_count: usize,
    pub config_hash: String,
}

impl From<&OODReport> for ReportRow {
    fn from(r: &OODReport) -> Self {
        Self {
            dataset: r.dataset.clone(),
            score_kind: r.score_kind,
            auroc: r.auroc,
            fpr95: r.fpr95,
            acc: r.acc,
            head_acc: r.group_acc.head,
            medium_acc: r.group_acc.medium,
            tail_acc: r.group_acc.tail,
            id_count: r.id_count,
            ood_count: r.ood_count,
            config_hash: r.config_hash.clone(),
        }
    }
}

impl From<ReportRow> for OODReport {
    fn from(r: ReportRow) -> Self {
        Self {
            dataset: r.dataset,
            score_kind: r.score_kind,
            auroc: r.auroc,
            fpr95: r.fpr95,
            acc: r.acc,
            group_acc: GroupAccuracy {
                head: r.head_acc,
                medium: r.medium_acc,
                tail: r.tail_acc,
            },
            id_count: r.id_count,
            ood_count: r.ood_count,
            config_hash: r.config_hash,
        }
    }
}

/// One row of the ablation table; toggles are 0/1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub struct AblationRow {
    pub nod: u8,
    pub rcl: u8,
    pub aala: u8,
    pub cbcl: u8,
    pub acc: f64,
    pub auroc: f64,
    pub fpr95: f64,
}

impl AblationRow {
    pub fn toggles(&self) -> AblationToggles {
        AblationToggles::new(self.nod == 1, self.rcl == 1, self.aala == 1, self.cbcl == 1)
    }
}

impl From<&AblationResult> for AblationRow {
    fn from(r: &AblationResult) -> Self {
        let t = r.toggles;
        Self {
            nod: t.nod.into(),
            rcl: t.rcl.into(),
            aala: t.aala.into(),
            cbcl: t.cbcl.into(),
            acc: r.acc,
            auroc: r.auroc,
            fpr95: r.fpr95,
        }
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::output(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::output(path, e))?;
    }
    w.flush().map_err(|e| CliError::output(path, e))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::input(path, e))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| CliError::input(path, e))
}

pub fn read_reports(path: &Path) -> CliResult<Vec<OODReport>> {
    Ok(read_csv::<ReportRow>(path)?.into_iter().map(OODReport::from).collect())
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn opt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), pct)
}

/// Left-aligned first column, right-aligned rest.
fn layout(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<String>| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(header.iter().map(|s| s.to_string()).collect());
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.clone()));
        out.push('\n');
    }
    out
}

/// Report rows (mean last) as a percentage table.
pub fn format_reports(rows: &[OODReport]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.dataset.clone(),
                pct(r.auroc),
                pct(r.fpr95),
                pct(r.acc),
                opt_pct(r.group_acc.head),
                opt_pct(r.group_acc.medium),
                opt_pct(r.group_acc.tail),
            ]
        })
        .collect();
    let kind = rows.first().map_or("", |r| r.score_kind.as_str());
    format!(
        "detector: {kind}\n{}",
        layout(&["dataset", "AUROC", "FPR95", "ACC", "head", "medium", "tail"], &body)
    )
}

pub fn format_ablation(rows: &[AblationRow]) -> String {
    let mark = |b: u8| if b == 1 { "x" } else { "-" }.to_string();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                mark(r.nod),
                mark(r.rcl),
                mark(r.aala),
                mark(r.cbcl),
                pct(r.acc),
                pct(r.auroc),
                pct(r.fpr95),
            ]
        })
        .collect();
    layout(&["NOD", "RCL", "AALA", "CBCL", "ACC", "AUROC", "FPR95"], &body)
}
