use ndarray::{Array2, Axis};
use proptest::prelude::*;
use ricasso_core::autograd::check::{numeric_gradient, relative_error};
use ricasso_core::autograd::Graph;
use ricasso_core::data::*;
use ricasso_core::losses::*;
use ricasso_core::moe::*;

fn logits(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-8.0f64..8.0, 2..=max_len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn aala_factors_are_a_shifted_distribution(
        rows in prop::collection::vec(prop::collection::vec(-8.0f64..8.0, 10), 1..=256),
    ) {
        // energies of realistic logit batches
        let e: Vec<f64> = rows.iter().map(|v| energy_score(v, 1.0).unwrap()).collect();
        let f = aala_factor(&e).unwrap();
        prop_assert!(f.iter().all(|&v| v > 1.0 && v <= 2.0));
        let excess: f64 = f.iter().map(|v| v - 1.0).sum();
        prop_assert!((excess - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn aala_factors_stay_in_range_for_extreme_spreads(e in prop::collection::vec(-300.0f64..300.0, 1..=64)) {
        // past ~36 nats of spread 1 + share rounds to exactly 1 in f64
        let f = aala_factor(&e).unwrap();
        prop_assert!(f.iter().all(|&v| (1.0..=2.0).contains(&v)));
        let excess: f64 = f.iter().map(|v| v - 1.0).sum();
        prop_assert!((excess - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn aala_factors_ignore_common_shift(e in prop::collection::vec(-30.0f64..30.0, 1..=64), c in -50.0f64..50.0) {
        let a = aala_factor(&e).unwrap();
        let shifted: Vec<f64> = e.iter().map(|v| v + c).collect();
        let b = aala_factor(&shifted).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn higher_energy_gets_larger_factor(e in prop::collection::vec(-10.0f64..10.0, 2..=32)) {
        let f = aala_factor(&e).unwrap();
        for i in 0..e.len() {
            for j in 0..e.len() {
                if e[i] > e[j] {
                    prop_assert!(f[i] >= f[j]);
                }
            }
        }
    }

    #[test]
    fn energy_moves_with_logit_shift(v in logits(12), c in -20.0f64..20.0, tau in 0.2f64..5.0) {
        let e = energy_score(&v, tau).unwrap();
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        prop_assert!((energy_score(&shifted, tau).unwrap() - (e - c)).abs() <= 1e-9);
        // bounded by the max logit and the max logit minus tau log C
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(e <= -max + 1e-12);
        prop_assert!(e >= -max - tau * (v.len() as f64).ln() - 1e-12);
    }

    #[test]
    fn adjusted_softmax_is_a_distribution(v in logits(10), c in -5.0f64..5.0) {
        let m: Vec<f64> = (0..v.len()).map(|i| -(i as f64) * 0.3).collect();
        let p = adjusted_softmax(&v, &m).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let q = adjusted_softmax(&shifted, &m).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn cbcl_matches_tanh_and_stays_bounded(dp in 0.0f64..20.0, dm in 0.0f64..20.0) {
        let cfg = LossConfig::default();
        let l = cbcl_loss(dp, dm, &cfg).unwrap();
        prop_assert!((l - ((dp - dm) / 2.0).tanh()).abs() <= 1e-6);
        prop_assert!(l.abs() <= 1.0);
        // increasing in d+, decreasing in d-
        prop_assert!(cbcl_loss(dp + 0.5, dm, &cfg).unwrap() >= l);
        prop_assert!(cbcl_loss(dp, dm + 0.5, &cfg).unwrap() <= l);
    }

    #[test]
    fn cbcl_survives_huge_distances(dp in 0.0f64..1e6, dm in 0.0f64..1e6) {
        let l = cbcl_loss(dp, dm, &LossConfig::default()).unwrap();
        prop_assert!(l.is_finite() && l.abs() <= 1.0);
    }

    #[test]
    fn dual_entropy_weight_is_positive(raw in prop::collection::vec(0.01f64..1.0, 2..8), y in 0usize..8) {
        let s: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let mut t = vec![0.0; p.len()];
        t[y % p.len()] = 1.0;
        let w = dual_entropy_weight(&p, &t, 1e-8).unwrap();
        // self-entropy plus cross-entropy to the target
        let oracle: f64 = -p.iter().zip(&t).map(|(pi, ti)| (pi + ti) * pi.ln()).sum::<f64>();
        prop_assert!((w - oracle).abs() <= 1e-12);
        prop_assert!(w > 0.0);
    }

    #[test]
    fn rcl_is_bounded_and_scale_free(
        v in prop::collection::vec(0.1f64..3.0, 16),
        k in 0.1f64..10.0,
    ) {
        let (h_m, h_c, u_m, u_c) = (&v[0..4], &v[4..8], &v[8..12], &v[12..16]);
        let l = rcl_loss(h_m, h_c, u_m, u_c).unwrap();
        prop_assert!((-2.0 - 1e-12..=2.0 + 1e-12).contains(&l));
        let scaled: Vec<f64> = u_m.iter().map(|x| x * k).collect();
        prop_assert!((rcl_loss(h_m, h_c, &scaled, u_c).unwrap() - l).abs() <= 1e-12);
    }
}

#[test]
fn two_hot_optimum_is_reached() {
    // minimize the soft cross-entropy of softmax(v + T) against a two-hot target
    let t = [0.5, 0.5, 0.0];
    let prior = [0.7, 0.2, 0.1];
    let margins: Vec<f64> = prior.iter().map(|p: &f64| p.ln()).collect();
    let target = Array2::from_shape_vec((1, 3), t.to_vec()).unwrap();
    let mut v = Array2::<f64>::zeros((1, 3));
    for _ in 0..20_000 {
        let mut g = Graph::new();
        let x = g.param(v.clone());
        let m = g.constant(Array2::from_shape_vec((1, 3), margins.clone()).unwrap());
        let lp = adjusted_log_probs(&mut g, x, m);
        let ce = soft_cross_entropy(&mut g, lp, &target);
        let l = g.mean(ce);
        let grad = g.backward(l).get(x);
        v = v - grad * 2.0;
    }
    let p = adjusted_softmax(v.row(0).as_slice().unwrap(), &margins).unwrap();
    for (a, b) in p.iter().zip(&t) {
        assert!((a - b).abs() < 1e-3, "{p:?}");
    }
}

struct Fixture {
    model: Backbone,
    batch: TrainBatch,
    centers: ClassCenters,
    priors: Array2<f64>,
    assignment: ExpertAssignment,
}

fn fixture(seed: u64) -> Fixture {
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
        feature_dim: 6,
        encoder: EncoderSpec::Mlp { hidden: vec![8] },
        proj_dim: 6,
        pred_hidden: 10,
    };
    let model = Backbone::new(spec, seed).unwrap();
    let assignment = assign_experts(&profile, 2).unwrap();
    let priors = expert_prior(profile.priors(), &assignment).unwrap();
    let mut centers = ClassCenters::new(4, 6, 0.5).unwrap();
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

/// Total loss at `tensors` and, optionally, its tape gradients.
fn total_at(fx: &Fixture, tensors: &[Array2<f64>], cfg: &LossConfig, grads: bool) -> (f64, Vec<Array2<f64>>) {
    let mut model = fx.model.clone();
    model.params_mut().tensors = tensors.to_vec();
    let mut g = Graph::new();
    let params = model.bind(&mut g, true).unwrap();
    let x = g.constant(stack_inputs(&fx.batch));
    let pass = model.forward(&mut g, &params, x).unwrap();
    let reweighting = GroupMembership {
        out_of_group: cfg.out_of_group_weight,
    };
    let ctx = LossContext {
        model: &model,
        params: &params,
        batch: &fx.batch,
        pass: &pass,
        centers: &fx.centers,
        expert_priors: &fx.priors,
        assignment: &fx.assignment,
        reweighting: &reweighting,
    };
    let (l, _) = total_loss(&mut g, &ctx, cfg).unwrap();
    let value = g.scalar(l);
    if !grads {
        return (value, vec![]);
    }
    let gr = g.backward(l);
    (
        value,
        params
            .iter()
            .zip(tensors)
            .map(|(&p, t)| gr.try_get(p).cloned().unwrap_or_else(|| Array2::zeros(t.dim())))
            .collect(),
    )
}

fn check_total(fx: &Fixture, cfg: &LossConfig, which: &[usize]) -> f64 {
    let base = fx.model.params().tensors.clone();
    let (_, analytic) = total_at(fx, &base, cfg, true);
    let mut worst: f64 = 0.0;
    for &i in which {
        let numeric = numeric_gradient(&base[i], 1e-6, |probe| {
            let mut t = base.clone();
            t[i] = probe.clone();
            total_at(fx, &t, cfg, false).0
        });
        worst = worst.max(relative_error(&analytic[i], &numeric));
    }
    worst
}

#[test]
fn total_loss_gradient_without_stop_gradient_paths() {
    // no consistency term and a differentiable center weight: every path
    // is live, so the tape gradient must match finite differences everywhere
    let cfg = LossConfig {
        rcl_enabled: false,
        detach_dec_weight: false,
        lambda0: 0.7,
        ..LossConfig::default()
    };
    for seed in 0..4 {
        let fx = fixture(seed);
        let all: Vec<usize> = (0..fx.model.params().len()).collect();
        let err = check_total(&fx, &cfg, &all);
        assert!(err <= 1e-4, "seed {seed}: relative error {err}");
    }
}

#[test]
fn total_loss_gradient_on_paths_past_the_projection() {
    // with the consistency term on, parameters that never feed the detached
    // projections still see the exact gradient
    let cfg = LossConfig {
        detach_dec_weight: false,
        ..LossConfig::default()
    };
    for seed in 0..4 {
        let fx = fixture(seed);
        let names = &fx.model.params().names;
        let which: Vec<usize> = (0..names.len())
            .filter(|&i| names[i].starts_with("pred") || names[i].ends_with(".cls"))
            .collect();
        assert!(!which.is_empty());
        let err = check_total(&fx, &cfg, &which);
        assert!(err <= 1e-4, "seed {seed}: relative error {err}");
    }
}

#[test]
fn aala_off_gives_unit_factors() {
    let fx = fixture(5);
    let cfg = LossConfig {
        aala_enabled: false,
        ..LossConfig::default()
    };
    let base = fx.model.params().tensors.clone();
    let on = total_at(&fx, &base, &LossConfig::default(), false).0;
    let off = total_at(&fx, &base, &cfg, false).0;
    assert!(on.is_finite() && off.is_finite());
    assert_ne!(on, off);
}
