//! Fixed workloads shared by the benchmarks.

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ricasso_core::autograd::Graph;
use ricasso_core::data::{build_training_batch, make_longtail_profile, SampleShape, SyntheticTask, TrainBatch};
use ricasso_core::eval::{ScoreKind, ScoreSet};
use ricasso_core::losses::{stack_inputs, total_loss, GroupMembership, LossConfig, LossContext};
use ricasso_core::moe::{assign_experts, expert_prior, Backbone, ClassCenters, EncoderSpec, ExpertAssignment, ModelSpec};
use ricasso_core::Result;

/// One training step's worth of inputs.
pub struct LossWorkload {
    pub model: Backbone,
    pub batch: TrainBatch,
    pub centers: ClassCenters,
    pub priors: Array2<f64>,
    pub assignment: ExpertAssignment,
    pub cfg: LossConfig,
}

impl LossWorkload {
    /// Synthetic long-tailed task with `pairs` ID/anti pairs per batch.
    pub fn new(num_classes: usize, pairs: usize, seed: u64) -> Result<Self> {
        let shape = SampleShape::new(1, 4, 4);
        let task = SyntheticTask {
            num_classes,
            shape,
            radius: 2.0,
            noise: 0.5,
            seed,
        };
        let profile = make_longtail_profile(num_classes, 50, 10.0)?;
        let data = task.sample_longtail(&profile, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let id: Vec<usize> = (0..pairs).map(|_| rng.random_range(0..data.len())).collect();
        let anti: Vec<usize> = (0..pairs).map(|_| rng.random_range(0..data.len())).collect();
        let batch = build_training_batch(data.batch(&id), data.batch(&anti), shape, num_classes, 1.0, seed)?;
        let spec = ModelSpec {
            input: shape,
            num_classes,
            num_experts: 3,
            feature_dim: 32,
            encoder: EncoderSpec::Mlp { hidden: vec![64] },
            proj_dim: 32,
            pred_hidden: 32,
        };
        let model = Backbone::new(spec.clone(), seed)?;
        let assignment = assign_experts(&profile, spec.num_experts - 1)?;
        let priors = expert_prior(profile.priors(), &assignment)?;
        let mut centers = ClassCenters::new(num_classes, spec.feature_dim, 0.5)?;
        let out = model.infer(&data.inputs, None)?;
        let feats = out.features.index_axis(Axis(1), spec.num_experts - 1).to_owned();
        centers.update(feats.view(), &data.labels)?;
        Ok(Self {
            model,
            batch,
            centers,
            priors,
            assignment,
            cfg: LossConfig::default(),
        })
    }

    /// Forward pass, full objective and backward pass; returns the loss.
    pub fn step(&self) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.model.bind(&mut g, true)?;
        let x = g.constant(stack_inputs(&self.batch));
        let pass = self.model.forward(&mut g, &p, x)?;
        let reweighting = GroupMembership {
            out_of_group: self.cfg.out_of_group_weight,
        };
        let ctx = LossContext {
            model: &self.model,
            params: &p,
            batch: &self.batch,
            pass: &pass,
            centers: &self.centers,
            expert_priors: &self.priors,
            assignment: &self.assignment,
            reweighting: &reweighting,
        };
        let (loss, _) = total_loss(&mut g, &ctx, &self.cfg)?;
        g.backward(loss);
        Ok(g.scalar(loss))
    }
}

/// Continuous scores with an ID shift; a coarse grid when `ties` is set.
pub fn score_set(n: usize, seed: u64, ties: bool) -> ScoreSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |shift: f64| -> Vec<f64> {
        (0..n)
            .map(|_| {
                let v: f64 = rng.random_range(-3.0..3.0) + shift;
                if ties {
                    (v * 4.0).round() / 4.0
                } else {
                    v
                }
            })
            .collect()
    };
    let id = draw(1.0);
    let ood = draw(0.0);
    ScoreSet::new(id, ood, ScoreKind::Energy).expect("non-empty finite scores")
}
