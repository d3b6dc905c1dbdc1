//! OOD scoring, detection metrics and long-tail accuracy reporting.

mod detectors;
mod metrics;
mod report;

pub use detectors::{
    msp_score, msp_scores, neg_energy_scores, odin_scores, score_inputs, Detector,
    DifferentiableLogits, OdinConfig, ScoreKind,
};
pub use metrics::{
    accuracy, auroc, class_groups, fpr_at_tpr, group_accuracy, per_class_accuracy, roc_curve,
    Group, GroupAccuracy, ScoreSet,
};
pub use report::{mean_report, parse_scores, read_score_file, write_score_file, OODReport, MEAN_ROW};
