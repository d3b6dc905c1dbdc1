use ricasso_core::data::SyntheticOod;
use ricasso_core::eval::{Detector, ScoreKind};
use ricasso_core::losses::LossConfig;
use ricasso_core::train::*;
use ricasso_core::Error;

const TINY: &str = r#"
seed = 3

[data]
kind = "synthetic"
num_classes = 3
n_max = 40
imbalance_ratio = 8.0
test_per_class = 30
val_per_class = 10
ood_count = 60

[model]
num_experts = 2
feature_dim = 8
encoder = { kind = "mlp", hidden = [16] }
proj_dim = 8
pred_hidden = 8

[optim]
base_lr = 0.05
epochs = 2
batch_size = 16
warmup_epochs = 1
"#;

fn tiny() -> RunConfig {
    RunConfig::from_toml_str(TINY).unwrap()
}

fn quiet(_: Progress<'_>) -> ricasso_core::Result<()> {
    Ok(())
}

fn run(cfg: &RunConfig) -> (TrainedModel, RunRecord) {
    let data = prepare_data(cfg).unwrap();
    fit(cfg, &data, &mut quiet).unwrap()
}

#[test]
fn identical_configs_give_identical_records() {
    let cfg = tiny();
    let (_, a) = run(&cfg);
    let (_, b) = run(&cfg);
    assert_eq!(a, b);
    assert!(!a.steps.is_empty());
    let mut other = cfg.clone();
    other.seed = 4;
    let (_, c) = run(&other);
    assert_ne!(a.steps[0].total, c.steps[0].total);
}

#[test]
fn lr_trace_follows_schedule() {
    let mut cfg = tiny();
    cfg.optim.epochs = 4;
    let (_, rec) = run(&cfg);
    assert_eq!(rec.lr_trace.len(), 4);
    for (e, &lr) in rec.lr_trace.iter().enumerate() {
        assert_eq!(lr, lr_at(e, &cfg.optim).unwrap());
    }
    for s in &rec.steps {
        assert_eq!(s.lr, rec.lr_trace[s.epoch]);
    }
}

#[test]
fn zero_weights_without_aala_leave_nod_only() {
    let mut cfg = tiny();
    cfg.loss = LossConfig {
        lambda0: 0.0,
        lambda1: 0.0,
        aala_enabled: false,
        ..LossConfig::default()
    };
    let (_, rec) = run(&cfg);
    for s in &rec.steps {
        assert_eq!(s.total, s.nod);
        assert!(s.cbcl.is_some() && s.rcl.is_some());
        assert_eq!(s.mean_factor, 1.0);
    }
}

#[test]
fn disabled_components_are_absent_and_total_recomposes() {
    for code in ["0000", "1010", "1101", "0111", "1111"] {
        let mut cfg = tiny();
        cfg.loss = AblationToggles::from_code(code).unwrap().apply(&cfg.loss);
        let (trained, rec) = run(&cfg);
        for s in &rec.steps {
            assert_eq!(s.cbcl.is_some(), cfg.loss.cbcl_enabled, "{code}");
            assert_eq!(s.rcl.is_some(), cfg.loss.rcl_enabled, "{code}");
            let recomposed = s.nod + cfg.loss.lambda0 * s.cbcl.unwrap_or(0.0) + cfg.loss.lambda1 * s.rcl.unwrap_or(0.0);
            assert!((s.total - recomposed).abs() < 1e-6, "{code}");
        }
        assert!(trained.centers.centers.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn reduces_to_static_logit_adjusted_training() {
    let mut cfg = tiny();
    cfg.loss = LossConfig {
        nod_enabled: false,
        aala_enabled: false,
        lambda0: 0.0,
        lambda1: 0.0,
        ..LossConfig::default()
    };
    let data = prepare_data(&cfg).unwrap();
    let (_, rec) = fit(&cfg, &data, &mut quiet).unwrap();
    let reference = reference_static_la_trace(&cfg, &data).unwrap();
    assert_eq!(reference.len(), rec.steps.len());
    for (r, s) in reference.iter().zip(&rec.steps) {
        assert!((r - s.total).abs() < 1e-6, "{r} vs {}", s.total);
    }
}

#[test]
fn divergence_is_reported() {
    let mut cfg = tiny();
    cfg.optim.base_lr = 1e30;
    cfg.optim.warmup_epochs = 0;
    cfg.optim.epochs = 3;
    let data = prepare_data(&cfg).unwrap();
    match fit(&cfg, &data, &mut quiet) {
        Err(Error::Diverged { .. }) => {}
        other => panic!("expected divergence, got {:?}", other.map(|(_, r)| r.steps.len())),
    }
}

#[test]
fn run_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.out_dir = dir.path().to_path_buf();
    let rec = train(&cfg, &mut quiet).unwrap();
    let run_dir = rec.run_dir.clone().unwrap();
    assert!(run_dir.starts_with(dir.path()));
    for f in [CONFIG_FILE, STEPS_FILE, EPOCHS_FILE, RECORD_FILE, CHECKPOINT_FILE] {
        assert!(run_dir.join(f).is_file(), "{f}");
    }
    let snapshot = RunConfig::load(&run_dir.join(CONFIG_FILE)).unwrap();
    assert_eq!(snapshot, cfg);
    assert_eq!(read_steps(&run_dir.join(STEPS_FILE)).unwrap(), rec.steps);
    assert_eq!(read_epochs(&run_dir.join(EPOCHS_FILE)).unwrap(), rec.epochs);
    let back: RunRecord = serde_json::from_str(&std::fs::read_to_string(run_dir.join(RECORD_FILE)).unwrap()).unwrap();
    assert_eq!(back, rec);

    let ck = Checkpoint::load(&run_dir.join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(ck.config_hash, cfg.hash());
    // a second run of the same config lands in a fresh directory
    let again = train(&cfg, &mut quiet).unwrap();
    assert_ne!(again.run_dir, rec.run_dir);
    assert_eq!(again.steps, rec.steps);
}

#[test]
fn tampered_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.out_dir = dir.path().to_path_buf();
    let rec = train(&cfg, &mut quiet).unwrap();
    let path = rec.checkpoint.unwrap();
    let mut ck = Checkpoint::load(&path).unwrap();
    ck.config.loss.lambda0 = 0.75;
    ck.save(&path).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(Error::HashMismatch { .. })));
}

#[test]
fn evaluation_contracts() {
    let mut cfg = tiny();
    cfg.optim.epochs = 3;
    let data = prepare_data(&cfg).unwrap();
    let (trained, rec) = fit(&cfg, &data, &mut quiet).unwrap();
    let ck = Checkpoint::new(&cfg, &trained);

    // the ID test set as its own OOD source is indistinguishable
    let same = OodSource::Inputs(OodInputs {
        name: "self".into(),
        inputs: data.test.inputs.clone(),
    });
    let ev = evaluate(&ck, &data.test, &[same], &Detector::new(ScoreKind::Energy)).unwrap();
    assert!((ev.rows[0].auroc - 0.5).abs() < 1e-12);
    assert_eq!(ev.mean.auroc, ev.rows[0].auroc);

    // accuracy does not depend on the detector
    let sources: Vec<OodSource> = data.ood.iter().cloned().map(OodSource::Inputs).collect();
    let e = evaluate(&ck, &data.test, &sources, &Detector::new(ScoreKind::Energy)).unwrap();
    let m = evaluate(&ck, &data.test, &sources, &Detector::new(ScoreKind::Msp)).unwrap();
    assert_eq!(e.rows.len(), 3);
    assert_eq!(e.mean.acc, m.mean.acc);
    assert_eq!(e.mean.config_hash, rec.config_hash);
    let mean = e.rows.iter().map(|r| r.auroc).sum::<f64>() / 3.0;
    assert!((e.mean.auroc - mean).abs() < 1e-12);

    // precomputed scores are used as given
    let scores = OodSource::Scores {
        name: "file".into(),
        scores: vec![-1e9; 5],
    };
    let s = evaluate(&ck, &data.test, &[scores], &Detector::new(ScoreKind::Energy)).unwrap();
    assert_eq!(s.rows[0].auroc, 1.0);
    assert_eq!(s.rows[0].fpr95, 0.0);
}

#[test]
fn separable_task_is_learned() {
    let mut cfg = tiny();
    if let DataConfig::Synthetic(s) = &mut cfg.data {
        s.radius = 12.0;
        s.noise = 0.3;
        s.imbalance_ratio = 1.0;
        s.val_ood = SyntheticOod::Blob { scale: 0.3 };
    }
    cfg.loss = LossConfig::baseline();
    cfg.optim.epochs = 8;
    let data = prepare_data(&cfg).unwrap();
    let (trained, rec) = fit(&cfg, &data, &mut quiet).unwrap();
    let sources = vec![OodSource::Inputs(data.ood[0].clone())];
    let ev = evaluate_model(&trained, &rec.config_hash, &data.test, &sources, &Detector::new(ScoreKind::Msp)).unwrap();
    assert_eq!(ev.mean.acc, 1.0);
    assert_eq!(rec.epochs.last().unwrap().val_acc, Some(1.0));
}

#[test]
fn ablation_grid_contracts() {
    let cfg = tiny();
    let rows = [AblationToggles::new(true, true, true, true)];
    let grid = run_ablation_grid(&cfg, &rows, &mut |_, _| Ok(())).unwrap();
    assert_eq!(grid.len(), 1);
    // a one-row grid is a plain training run
    let (_, rec) = run(&cfg);
    assert_eq!(grid[0].record, rec);

    let twice = [AblationToggles::new(false, false, true, false); 2];
    let grid = run_ablation_grid(&cfg, &twice, &mut |_, _| Ok(())).unwrap();
    assert_eq!(grid[0], grid[1]);
    assert!(run_ablation_grid(&cfg, &[], &mut |_, _| Ok(())).is_err());
}

#[test]
fn cnn_encoder_trains() {
    let mut cfg = tiny();
    cfg.model.encoder = ricasso_core::moe::EncoderSpec::Cnn { channels: 2 };
    cfg.optim.epochs = 1;
    let (_, rec) = run(&cfg);
    assert!(rec.steps.iter().all(|s| s.total.is_finite()));
}
