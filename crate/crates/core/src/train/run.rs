//! The training loop.

use std::path::PathBuf;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::checkpoint::TrainedModel;
use super::config::{lr_at, RunConfig};
use super::optim::Sgd;
use super::prepare::PreparedData;
use crate::autograd::Graph;
use crate::data::{build_training_batch, shuffled, AntiLongTailSampler, Batch, Dataset, TrainBatch};
use crate::error::{Error, Result};
use crate::eval::{accuracy, auroc, score_inputs, Detector, ScoreSet};
use crate::losses::{stack_inputs, total_loss, GroupMembership, LossBreakdown, LossContext};
use crate::moe::{assign_experts, expert_prior, Backbone, ClassCenters, FeatureSource, ModelSpec};
use crate::rng;

/// One optimizer step's loss values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    /// Global step index.
    pub step: usize,
    pub lr: f64,
    pub nod: f64,
    pub cbcl: Option<f64>,
    pub rcl: Option<f64>,
    pub total: f64,
    pub mean_factor: f64,
    pub mean_energy: f64,
    pub d_plus: Option<f64>,
    pub d_minus: Option<f64>,
    pub cbcl_clamped: bool,
    pub unseen_center: bool,
}

impl StepRecord {
    fn new(epoch: usize, step: usize, lr: f64, b: &LossBreakdown) -> Self {
        Self {
            epoch,
            step,
            lr,
            nod: b.nod,
            cbcl: b.cbcl,
            rcl: b.rcl,
            total: b.total,
            mean_factor: b.mean_factor,
            mean_energy: b.mean_energy,
            d_plus: b.d_plus,
            d_minus: b.d_minus,
            cbcl_clamped: b.cbcl_clamped,
            unseen_center: b.unseen_center,
        }
    }
}

/// Per-epoch means of the step losses plus validation metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub nod: f64,
    pub cbcl: Option<f64>,
    pub rcl: Option<f64>,
    pub total: f64,
    pub val_acc: Option<f64>,
    pub val_auroc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub config_hash: String,
    pub epochs: Vec<EpochRecord>,
    /// Learning rate of every epoch.
    pub lr_trace: Vec<f64>,
    pub steps: Vec<StepRecord>,
    pub run_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

/// Progress callbacks from [`fit`].
pub enum Progress<'a> {
    Step(&'a StepRecord),
    Epoch(&'a EpochRecord),
}

pub fn model_spec(cfg: &RunConfig, data: &PreparedData) -> ModelSpec {
    ModelSpec {
        input: data.train.shape,
        num_classes: data.train.num_classes,
        num_experts: cfg.model.num_experts,
        feature_dim: cfg.model.feature_dim,
        encoder: cfg.model.encoder.clone(),
        proj_dim: cfg.model.proj_dim,
        pred_hidden: cfg.model.pred_hidden,
    }
}

/// Freshly initialized model, centers and expert layout for a run.
pub fn init_model(cfg: &RunConfig, data: &PreparedData) -> Result<TrainedModel> {
    let model = Backbone::new(model_spec(cfg, data), cfg.seed)?;
    let assignment = assign_experts(&data.profile, cfg.model.num_experts - 1)?.with_tau(cfg.model.global_tau);
    let centers = ClassCenters::new(data.train.num_classes, cfg.model.feature_dim, cfg.model.center_momentum)?;
    Ok(TrainedModel {
        model,
        centers,
        assignment,
        profile: data.profile.clone(),
        class_names: data.class_names.clone(),
    })
}

/// ID row positions of one epoch, in batches of at most `batch_size`; a
/// trailing batch of one sample is dropped since pairing needs two.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut r = rng::stream(seed, &[rng::TAG_ORDER, epoch as u64]);
    let order = shuffled(n, &mut r);
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

fn empty_batch(dim: usize) -> Batch {
    Batch {
        inputs: Array2::zeros((0, dim)),
        labels: Vec::new(),
        indices: Vec::new(),
    }
}

/// Batch carrying ID rows only, for runs where no term reads the others.
fn id_only(id: Batch, data: &Dataset) -> TrainBatch {
    TrainBatch {
        shape: data.shape,
        num_classes: data.num_classes,
        anti: empty_batch(data.shape.len()),
        id,
        mixed_mixup: Vec::new(),
        mixed_cutmix: Vec::new(),
        pairing: Vec::new(),
    }
}

/// Validation accuracy and detector AUROC of the current model.
pub fn validate(model: &Backbone, data: &PreparedData, detector: &Detector) -> Result<(f64, Option<f64>)> {
    let logits = model.ensemble_logits(&data.val.inputs)?;
    let preds = argmax_rows(&logits);
    let acc = accuracy(&preds, &data.val.labels)?;
    let auroc = match &data.val_ood {
        Some(ood) => {
            let id_scores = score_inputs(model, &data.val.inputs, detector)?;
            let ood_scores = score_inputs(model, ood, detector)?;
            let set = ScoreSet::new(id_scores.to_vec(), ood_scores.to_vec(), detector.kind)?;
            Some(auroc(&set)?)
        }
        None => None,
    };
    Ok((acc, auroc))
}

pub fn argmax_rows(x: &Array2<f64>) -> Vec<usize> {
    x.outer_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc })
                .0
        })
        .collect()
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Trains a model in memory. `progress` sees every step and epoch record as
/// it is produced.
pub fn fit(
    cfg: &RunConfig,
    data: &PreparedData,
    progress: &mut dyn FnMut(Progress<'_>) -> Result<()>,
) -> Result<(TrainedModel, RunRecord)> {
    cfg.validate()?;
    let mut state = init_model(cfg, data)?;
    let expert_priors = expert_prior(data.profile.priors(), &state.assignment)?;
    let reweighting = GroupMembership {
        out_of_group: cfg.loss.out_of_group_weight,
    };
    let detector = Detector {
        kind: cfg.eval.detector,
        tau: cfg.eval.tau,
        odin: cfg.eval.odin,
    };
    let needs_mixed = cfg.loss.nod_enabled || cfg.loss.cbcl_enabled || cfg.loss.rcl_enabled;
    let mut opt = Sgd::new(
        &state.model.params().tensors,
        cfg.optim.momentum,
        cfg.optim.weight_decay,
    );
    let train = &data.train;
    let mut record = RunRecord {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        epochs: Vec::with_capacity(cfg.optim.epochs),
        lr_trace: Vec::with_capacity(cfg.optim.epochs),
        steps: Vec::new(),
        run_dir: None,
        checkpoint: None,
    };
    let mut global_step = 0;
    for epoch in 0..cfg.optim.epochs {
        let lr = lr_at(epoch, &cfg.optim)?;
        record.lr_trace.push(lr);
        let mut sampler = AntiLongTailSampler::from_labels(
            &train.labels,
            train.num_classes,
            rng::derive_seed(cfg.seed, &[rng::TAG_ANTI, epoch as u64]),
        )?;
        let first_step = record.steps.len();
        for (local, ids) in epoch_batches(train.len(), cfg.optim.batch_size, cfg.seed, epoch)
            .into_iter()
            .enumerate()
        {
            let id = train.batch(&ids);
            let batch = if needs_mixed {
                let anti = train.batch(&sampler.take_batch(ids.len()));
                let mix_seed = rng::derive_seed(cfg.seed, &[rng::TAG_MIX, epoch as u64, local as u64]);
                build_training_batch(id, anti, train.shape, train.num_classes, cfg.optim.mix_alpha, mix_seed)?
            } else {
                id_only(id, train)
            };

            let mut g = Graph::new();
            let params = state.model.bind(&mut g, true)?;
            let x = g.constant(stack_inputs(&batch));
            let pass = state.model.forward(&mut g, &params, x)?;
            let ctx = LossContext {
                model: &state.model,
                params: &params,
                batch: &batch,
                pass: &pass,
                centers: &state.centers,
                expert_priors: &expert_priors,
                assignment: &state.assignment,
                reweighting: &reweighting,
            };
            let (loss, breakdown) = total_loss(&mut g, &ctx, &cfg.loss)?;
            if !breakdown.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: global_step,
                    value: breakdown.total,
                });
            }
            let grads = g.backward(loss);
            let grad_values: Vec<Array2<f64>> = params.iter().map(|&p| grads.get(p)).collect();
            if grad_values.iter().any(|gv| gv.iter().any(|v| !v.is_finite())) {
                return Err(Error::Diverged {
                    epoch,
                    step: global_step,
                    value: f64::NAN,
                });
            }

            let b = batch.id.len();
            let z = match cfg.loss.feature_source {
                FeatureSource::Global => g.value(*pass.features.last().expect("expert")).clone(),
                FeatureSource::Mean => {
                    let mut acc = g.value(pass.features[0]).clone();
                    for &f in &pass.features[1..] {
                        acc += g.value(f);
                    }
                    acc / pass.features.len() as f64
                }
            };
            state
                .centers
                .update(z.slice_axis(Axis(0), (0..b).into()), &batch.id.labels)?;

            opt.step(&mut state.model.params_mut().tensors, &grad_values, lr)?;

            let step = StepRecord::new(epoch, global_step, lr, &breakdown);
            progress(Progress::Step(&step))?;
            record.steps.push(step);
            global_step += 1;
        }

        let steps = &record.steps[first_step..];
        let last = epoch + 1 == cfg.optim.epochs;
        let (val_acc, val_auroc) = if last || (epoch + 1) % cfg.eval.validate_every == 0 {
            let (a, r) = validate(&state.model, data, &detector)?;
            (Some(a), r)
        } else {
            (None, None)
        };
        let summary = EpochRecord {
            epoch,
            lr,
            steps: steps.len(),
            nod: mean_of(steps.iter().map(|s| s.nod)),
            cbcl: cfg.loss.cbcl_enabled.then(|| mean_of(steps.iter().filter_map(|s| s.cbcl))),
            rcl: cfg.loss.rcl_enabled.then(|| mean_of(steps.iter().filter_map(|s| s.rcl))),
            total: mean_of(steps.iter().map(|s| s.total)),
            val_acc,
            val_auroc,
        };
        progress(Progress::Epoch(&summary))?;
        record.epochs.push(summary);
    }
    Ok((state, record))
}
