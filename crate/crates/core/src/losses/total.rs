//! Assembly of every term over one training batch.

use std::ops::Range;

use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::config::LossConfig;
use super::consistency::rcl;
use super::contrastive::{cbcl, dec_distance, dual_entropy, vbl_distance, CenterEntry};
use super::logit_adjust::{cls_loss, ClsTerms};
use super::reweight::ExpertReweighting;
use crate::autograd::{Graph, Var};
use crate::data::{one_hot, MixMethod, TrainBatch};
use crate::error::{Error, Result};
use crate::moe::{Backbone, ClassCenters, ExpertAssignment, ForwardPass};

/// Row ranges of each sample group inside the stacked forward batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchRows {
    pub id: Range<usize>,
    pub anti: Range<usize>,
    pub mixup: Range<usize>,
    pub cutmix: Range<usize>,
}

impl BatchRows {
    pub fn for_batch(batch: &TrainBatch) -> Self {
        let b = batch.id.len();
        let a = batch.anti.len();
        let m = batch.mixed_mixup.len();
        let c = batch.mixed_cutmix.len();
        Self {
            id: 0..b,
            anti: b..b + a,
            mixup: b + a..b + a + m,
            cutmix: b + a + m..b + a + m + c,
        }
    }

    pub fn total(&self) -> usize {
        self.cutmix.end
    }
}

/// `[id; anti; mixup; cutmix]` inputs for one forward pass.
pub fn stack_inputs(batch: &TrainBatch) -> Array2<f64> {
    let mixup = batch.mixed_inputs(MixMethod::Mixup);
    let cutmix = batch.mixed_inputs(MixMethod::Cutmix);
    concatenate(
        Axis(0),
        &[batch.id.inputs.view(), batch.anti.inputs.view(), mixup.view(), cutmix.view()],
    )
    .expect("all groups share the input width")
}

/// Rows, soft targets and primary labels entering the classification loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ClsRows {
    pub rows: Vec<usize>,
    pub targets: Array2<f64>,
    pub primary: Vec<usize>,
}

/// ID rows only when `nod` is false; otherwise ID, anti-long-tailed and both
/// mixed groups with their two-hot labels. A mixed sample's primary label is
/// its first (long-tailed) source.
pub fn cls_rows(batch: &TrainBatch, rows: &BatchRows, nod: bool) -> ClsRows {
    let c = batch.num_classes;
    if !nod {
        return ClsRows {
            rows: rows.id.clone().collect(),
            targets: one_hot(&batch.id.labels, c),
            primary: batch.id.labels.clone(),
        };
    }
    let targets = concatenate(
        Axis(0),
        &[
            one_hot(&batch.id.labels, c).view(),
            one_hot(&batch.anti.labels, c).view(),
            batch.mixed_targets(MixMethod::Mixup).view(),
            batch.mixed_targets(MixMethod::Cutmix).view(),
        ],
    )
    .expect("targets share C columns");
    let mut primary = batch.id.labels.clone();
    primary.extend(&batch.anti.labels);
    primary.extend(batch.mixed_mixup.iter().map(|m| m.label_i));
    primary.extend(batch.mixed_cutmix.iter().map(|m| m.label_i));
    ClsRows {
        rows: (0..rows.total()).collect(),
        targets,
        primary,
    }
}

/// Classification loss over the selected rows of a forward pass.
pub fn nod_loss(
    g: &mut Graph,
    pass: &ForwardPass,
    selection: &ClsRows,
    expert_priors: &Array2<f64>,
    assignment: &ExpertAssignment,
    reweighting: &dyn ExpertReweighting,
    cfg: &LossConfig,
) -> Result<ClsTerms> {
    let full = pass
        .logits
        .first()
        .map(|&v| g.shape(v).0)
        .ok_or_else(|| Error::shape("forward pass has no experts"))?;
    let identity = selection.rows.len() == full && selection.rows.iter().enumerate().all(|(i, &r)| i == r);
    let (logits, features): (Vec<Var>, Vec<Var>) = if identity {
        (pass.logits.clone(), pass.features.clone())
    } else {
        let l = pass.logits.iter().map(|&v| g.select_rows(v, &selection.rows)).collect();
        let f = pass.features.iter().map(|&v| g.select_rows(v, &selection.rows)).collect();
        (l, f)
    };
    let weights = reweighting.weights(assignment, &selection.primary);
    cls_loss(g, &logits, &features, &selection.targets, expert_priors, &weights, cfg)
}

/// Per-step loss values. Disabled components are `None` and contribute
/// nothing to `total`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Classification term: over ID, anti-long-tailed and mixed samples when
    /// NOD is enabled, over ID samples only otherwise.
    pub nod: f64,
    pub cbcl: Option<f64>,
    pub rcl: Option<f64>,
    pub total: f64,
    pub d_plus: Option<f64>,
    pub d_minus: Option<f64>,
    /// Mean margin factor over experts and samples (1 with AALA off).
    pub mean_factor: f64,
    /// Mean global-expert energy over the classification rows.
    pub mean_energy: f64,
    /// Margin factors per expert per classification row; the recalibrated
    /// margin is this factor times the log expert prior.
    pub margin_factors: Vec<Vec<f64>>,
    /// A center used by the pulling term had never been updated.
    pub unseen_center: bool,
    /// An exponent of the boundary-center combination hit its cap.
    pub cbcl_clamped: bool,
}

impl LossBreakdown {
    /// `nod + lambda0 * cbcl + lambda1 * rcl` from the stored parts.
    pub fn recompose(&self, cfg: &LossConfig) -> f64 {
        self.nod + cfg.lambda0 * self.cbcl.unwrap_or(0.0) + cfg.lambda1 * self.rcl.unwrap_or(0.0)
    }
}

/// Everything [`total_loss`] reads besides the tape.
pub struct LossContext<'a> {
    pub model: &'a Backbone,
    pub params: &'a [Var],
    pub batch: &'a TrainBatch,
    pub pass: &'a ForwardPass,
    pub centers: &'a ClassCenters,
    pub expert_priors: &'a Array2<f64>,
    pub assignment: &'a ExpertAssignment,
    pub reweighting: &'a dyn ExpertReweighting,
}

/// Probability vectors for the dual-entropy weight: the mean over experts of
/// the statically prior-adjusted softmax.
fn ensemble_adjusted_probs(
    g: &mut Graph,
    pass: &ForwardPass,
    rows: &[usize],
    expert_priors: &Array2<f64>,
    detach: bool,
) -> Var {
    let mut acc: Option<Var> = None;
    for (k, &logits) in pass.logits.iter().enumerate() {
        let v = g.select_rows(logits, rows);
        let v = if detach { g.detach(v) } else { v };
        let log_prior = expert_priors.row(k).mapv(f64::ln).insert_axis(Axis(0));
        let lp = g.constant(log_prior);
        let adj = g.add_row(v, lp);
        let p = g.softmax_rows(adj);
        acc = Some(match acc {
            Some(a) => g.add(a, p),
            None => p,
        });
    }
    g.scale(acc.expect("at least one expert"), 1.0 / pass.logits.len() as f64)
}

/// `L = L_nod + lambda0 * L_cbcl + lambda1 * L_rcl` for one batch whose
/// stacked forward pass is `ctx.pass`.
pub fn total_loss(g: &mut Graph, ctx: &LossContext<'_>, cfg: &LossConfig) -> Result<(Var, LossBreakdown)> {
    cfg.validate()?;
    let batch = ctx.batch;
    let rows = BatchRows::for_batch(batch);
    let (n_rows, _) = g.shape(ctx.pass.ensemble);
    if n_rows != rows.total() {
        return Err(Error::shape(format!(
            "forward pass has {n_rows} rows, batch stacks {}",
            rows.total()
        )));
    }

    let selection = cls_rows(batch, &rows, cfg.nod_enabled);
    let terms = nod_loss(
        g,
        ctx.pass,
        &selection,
        ctx.expert_priors,
        ctx.assignment,
        ctx.reweighting,
        cfg,
    )?;
    let nod = terms.loss;
    let margin_factors: Vec<Vec<f64>> =
        terms.factors.iter().map(|&f| g.value(f).iter().copied().collect()).collect();
    let n_factors: usize = margin_factors.iter().map(Vec::len).sum();
    let mean_factor = margin_factors.iter().flatten().sum::<f64>() / n_factors as f64;
    let global_energy = g.value(*terms.energies.last().expect("expert"));
    let mean_energy = global_energy.mean().unwrap_or(0.0);

    let mut total = nod;
    let mut breakdown = LossBreakdown {
        nod: g.scalar(nod),
        cbcl: None,
        rcl: None,
        total: 0.0,
        d_plus: None,
        d_minus: None,
        mean_factor,
        mean_energy,
        margin_factors,
        unseen_center: false,
        cbcl_clamped: false,
    };

    let need_features = cfg.cbcl_enabled || cfg.rcl_enabled;
    let z = need_features.then(|| ctx.model.contrastive_features(g, ctx.pass, cfg.feature_source));

    if let (true, Some(z)) = (cfg.cbcl_enabled, z) {
        let p = batch.num_pairs();
        // every mixed sample against both of its sources
        let mut src_i = Vec::with_capacity(2 * p);
        let mut src_j = Vec::with_capacity(2 * p);
        let mut mixed = Vec::with_capacity(2 * p);
        for (group, samples) in [(&rows.mixup, &batch.mixed_mixup), (&rows.cutmix, &batch.mixed_cutmix)] {
            for (offset, m) in samples.iter().enumerate() {
                src_i.push(rows.id.start + m.src_i);
                src_j.push(rows.anti.start + m.src_j);
                mixed.push(group.start + offset);
            }
        }
        let zi = g.select_rows(z, &src_i);
        let zj = g.select_rows(z, &src_j);
        let zm = g.select_rows(z, &mixed);
        let d_minus = vbl_distance(g, zi, zj, zm)?;

        let mut entries = Vec::new();
        let mut dec_rows: Vec<usize> = rows.id.clone().chain(rows.anti.clone()).collect();
        let mut dec_targets = concatenate(
            Axis(0),
            &[
                one_hot(&batch.id.labels, batch.num_classes).view(),
                one_hot(&batch.anti.labels, batch.num_classes).view(),
            ],
        )
        .expect("C columns");
        for (slot, (&row, &label)) in dec_rows
            .iter()
            .zip(batch.id.labels.iter().chain(&batch.anti.labels))
            .enumerate()
        {
            entries.push(CenterEntry {
                row: slot,
                class: label,
                share: 1.0,
            });
            debug_assert!(row < rows.total());
        }
        let mut num_samples = dec_rows.len();
        if cfg.dec_include_mixed {
            let mixed_targets = concatenate(
                Axis(0),
                &[
                    batch.mixed_targets(MixMethod::Mixup).view(),
                    batch.mixed_targets(MixMethod::Cutmix).view(),
                ],
            )
            .expect("C columns");
            for (offset, m) in batch.mixed_mixup.iter().chain(&batch.mixed_cutmix).enumerate() {
                let slot = dec_rows.len() + offset;
                entries.push(CenterEntry {
                    row: slot,
                    class: m.label_i,
                    share: m.lam,
                });
                entries.push(CenterEntry {
                    row: slot,
                    class: m.label_j,
                    share: 1.0 - m.lam,
                });
            }
            dec_rows.extend(rows.mixup.clone().chain(rows.cutmix.clone()));
            dec_targets = concatenate(Axis(0), &[dec_targets.view(), mixed_targets.view()]).expect("C columns");
            num_samples = dec_rows.len();
        }
        let probs = ensemble_adjusted_probs(g, ctx.pass, &dec_rows, ctx.expert_priors, cfg.detach_dec_weight);
        let omega = dual_entropy(g, probs, &dec_targets, cfg.prob_floor);
        let omega = if cfg.detach_dec_weight { g.detach(omega) } else { omega };
        let z_dec = g.select_rows(z, &dec_rows);
        breakdown.unseen_center = entries.iter().any(|e| e.share > 0.0 && !ctx.centers.seen(e.class));
        let d_plus = dec_distance(g, z_dec, omega, &entries, &ctx.centers.centers, num_samples)?;

        let (l_cbcl, clamped) = cbcl(g, d_plus, d_minus, cfg);
        breakdown.cbcl_clamped = clamped;
        breakdown.d_plus = Some(g.scalar(d_plus));
        breakdown.d_minus = Some(g.scalar(d_minus));
        breakdown.cbcl = Some(g.scalar(l_cbcl));
        let weighted = g.scale(l_cbcl, cfg.lambda0);
        total = g.add(total, weighted);
    }

    if let (true, Some(z)) = (cfg.rcl_enabled, z) {
        let mixed_rows: Vec<usize> = rows.mixup.clone().chain(rows.cutmix.clone()).collect();
        let zm = g.select_rows(z, &mixed_rows);
        let (h, u) = ctx.model.project(g, ctx.params, zm);
        let p = rows.mixup.len();
        let h_m = g.slice_rows(h, 0, p);
        let h_c = g.slice_rows(h, p, 2 * p);
        let u_m = g.slice_rows(u, 0, p);
        let u_c = g.slice_rows(u, p, 2 * p);
        let l_rcl = rcl(g, h_m, h_c, u_m, u_c)?;
        breakdown.rcl = Some(g.scalar(l_rcl));
        let weighted = g.scale(l_rcl, cfg.lambda1);
        total = g.add(total, weighted);
    }

    breakdown.total = g.scalar(total);
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_training_batch, make_longtail_profile, SampleShape, SyntheticTask};
    use crate::losses::reweight::GroupMembership;
    use crate::moe::{assign_experts, expert_prior, EncoderSpec, ModelSpec};

    pub(crate) struct Fixture {
        pub model: Backbone,
        pub batch: TrainBatch,
        pub centers: ClassCenters,
        pub priors: Array2<f64>,
        pub assignment: ExpertAssignment,
    }

    pub(crate) fn fixture(seed: u64) -> Fixture {
        let shape = SampleShape::new(1, 2, 4);
        let task = SyntheticTask {
            num_classes: 4,
            shape,
            radius: 2.0,
            noise: 0.5,
            seed,
        };
        let profile = make_longtail_profile(4, 12, 6.0).unwrap();
        let data = task.sample_longtail(&profile, seed).unwrap();
        let n = data.len();
        let batch = build_training_batch(
            data.batch(&[0, 3, 13, n - 1]),
            data.batch(&[n - 1, n - 2, 14, 1]),
            shape,
            4,
            1.0,
            seed,
        )
        .unwrap();
        let spec = ModelSpec {
            input: shape,
            num_classes: 4,
            num_experts: 3,
            feature_dim: 5,
            encoder: EncoderSpec::Mlp { hidden: vec![6] },
            proj_dim: 6,
            pred_hidden: 12,
        };
        let model = Backbone::new(spec, seed).unwrap();
        let assignment = assign_experts(&profile, 2).unwrap();
        let priors = expert_prior(profile.priors(), &assignment).unwrap();
        let mut centers = ClassCenters::new(4, 5, 0.5).unwrap();
        let out = model.infer(&batch.id.inputs, None).unwrap();
        let feats = out.features.index_axis(Axis(1), 2).to_owned();
        centers.update(feats.view(), &batch.id.labels).unwrap();
        Fixture {
            model,
            batch,
            centers,
            priors,
            assignment,
        }
    }

    fn evaluate(fx: &Fixture, cfg: &LossConfig) -> LossBreakdown {
        let mut g = Graph::new();
        let params = fx.model.bind(&mut g, true).unwrap();
        let x = g.constant(stack_inputs(&fx.batch));
        let pass = fx.model.forward(&mut g, &params, x).unwrap();
        let reweighting = GroupMembership { out_of_group: 0.1 };
        let ctx = LossContext {
            model: &fx.model,
            params: &params,
            batch: &fx.batch,
            pass: &pass,
            centers: &fx.centers,
            expert_priors: &fx.priors,
            assignment: &fx.assignment,
            reweighting: &reweighting,
        };
        total_loss(&mut g, &ctx, cfg).unwrap().1
    }

    #[test]
    fn zero_lambdas_give_nod_only() {
        let fx = fixture(1);
        let cfg = LossConfig {
            lambda0: 0.0,
            lambda1: 0.0,
            aala_enabled: false,
            ..LossConfig::default()
        };
        let b = evaluate(&fx, &cfg);
        assert_eq!(b.total, b.nod);
        assert!(b.cbcl.is_some() && b.rcl.is_some());
        assert_eq!(b.mean_factor, 1.0);
    }

    #[test]
    fn breakdown_recomposes() {
        for seed in 0..5 {
            let fx = fixture(seed);
            let cfg = LossConfig {
                lambda0: 0.1 * seed as f64,
                lambda1: 0.3 + seed as f64,
                dec_include_mixed: seed % 2 == 0,
                ..LossConfig::default()
            };
            let b = evaluate(&fx, &cfg);
            assert!((b.total - b.recompose(&cfg)).abs() < 1e-6);
            assert!(!b.unseen_center || !cfg.dec_include_mixed || b.cbcl.is_some());
        }
    }

    #[test]
    fn disabled_components_are_absent() {
        let fx = fixture(3);
        let b = evaluate(&fx, &LossConfig::baseline());
        assert!(b.cbcl.is_none() && b.rcl.is_none());
        assert_eq!(b.total, b.nod);
        assert_eq!(b.margin_factors[0].len(), fx.batch.id.len());
    }

    #[test]
    fn parts_compose_with_unit_values() {
        let b = LossBreakdown {
            nod: 1.0,
            cbcl: Some(1.0),
            rcl: Some(1.0),
            total: 1.75,
            d_plus: None,
            d_minus: None,
            mean_factor: 1.0,
            mean_energy: 0.0,
            margin_factors: vec![],
            unseen_center: false,
            cbcl_clamped: false,
        };
        let cfg = LossConfig {
            lambda0: 0.5,
            lambda1: 0.25,
            ..LossConfig::default()
        };
        assert_eq!(b.recompose(&cfg), 1.75);
    }

    #[test]
    fn row_selection_matches_groups() {
        let fx = fixture(2);
        let rows = BatchRows::for_batch(&fx.batch);
        assert_eq!(rows.total(), 16);
        let off = cls_rows(&fx.batch, &rows, false);
        assert_eq!(off.rows, vec![0, 1, 2, 3]);
        let on = cls_rows(&fx.batch, &rows, true);
        assert_eq!(on.rows.len(), 16);
        assert_eq!(on.primary[8], fx.batch.mixed_mixup[0].label_i);
        for row in on.targets.outer_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
