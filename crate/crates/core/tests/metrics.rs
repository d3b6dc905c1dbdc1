use proptest::prelude::*;
use ricasso_core::data::ClassProfile;
use ricasso_core::eval::*;

/// O(n*m) pair count.
fn brute_auroc(id: &[f64], ood: &[f64]) -> f64 {
    let mut s = 0.0;
    for &a in id {
        for &b in ood {
            s += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    s / (id.len() * ood.len()) as f64
}

/// Scan every candidate threshold, keep the largest one that accepts enough
/// ID scores.
fn brute_fpr(id: &[f64], ood: &[f64], tpr: f64) -> f64 {
    let mut best: Option<f64> = None;
    for &t in id.iter().chain(ood) {
        let accepted = id.iter().filter(|&&s| s >= t).count() as f64 / id.len() as f64;
        if accepted + 1e-12 >= tpr && best.map_or(true, |b| t > b) {
            best = Some(t);
        }
    }
    let t = best.expect("the smallest score accepts every ID sample");
    ood.iter().filter(|&&s| s >= t).count() as f64 / ood.len() as f64
}

fn set(id: &[f64], ood: &[f64]) -> ScoreSet {
    ScoreSet::new(id.to_vec(), ood.to_vec(), ScoreKind::Energy).unwrap()
}

/// Scores on a coarse grid so ties are common.
fn scores(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-20i32..20).prop_map(|v| v as f64 * 0.25), 1..=max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn auroc_matches_pair_count(id in scores(60), ood in scores(60)) {
        let a = auroc(&set(&id, &ood)).unwrap();
        prop_assert!((a - brute_auroc(&id, &ood)).abs() <= 1e-12);
    }

    #[test]
    fn fpr_matches_threshold_scan(id in scores(60), ood in scores(60), tpr in 0.05f64..=1.0) {
        let f = fpr_at_tpr(&set(&id, &ood), tpr).unwrap();
        prop_assert_eq!(f, brute_fpr(&id, &ood, tpr));
        prop_assert_eq!(fpr_at_tpr(&set(&id, &ood), 0.95).unwrap(), brute_fpr(&id, &ood, 0.95));
    }

    #[test]
    fn auroc_is_antisymmetric(id in scores(40), ood in scores(40)) {
        let a = auroc(&set(&id, &ood)).unwrap();
        let b = auroc(&set(&ood, &id)).unwrap();
        prop_assert!((a + b - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn auroc_ignores_monotone_transforms(id in scores(40), ood in scores(40), shift in -5.0f64..5.0) {
        let f = |v: &[f64]| v.iter().map(|x| (x * 0.3).exp() * 2.0 + shift).collect::<Vec<_>>();
        let a = auroc(&set(&id, &ood)).unwrap();
        let b = auroc(&set(&f(&id), &f(&ood))).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn raising_an_id_score_never_lowers_auroc(id in scores(40), ood in scores(40), pick in 0usize..40) {
        let a = auroc(&set(&id, &ood)).unwrap();
        let mut raised = id.clone();
        let i = pick % raised.len();
        raised[i] += 1.0;
        prop_assert!(auroc(&set(&raised, &ood)).unwrap() >= a);
        let f = fpr_at_tpr(&set(&id, &ood), 0.95).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
    }

    #[test]
    fn roc_is_monotone_and_spans_the_square(id in scores(40), ood in scores(40)) {
        let pts = roc_curve(&set(&id, &ood)).unwrap();
        prop_assert_eq!(pts[0], (0.0, 0.0));
        prop_assert_eq!(*pts.last().unwrap(), (1.0, 1.0));
        for w in pts.windows(2) {
            prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
        }
        // trapezoids under the curve give the same area
        let area: f64 = pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum();
        prop_assert!((area - auroc(&set(&id, &ood)).unwrap()).abs() <= 1e-12);
    }
}

#[test]
fn worked_auroc_example_is_exact() {
    assert_eq!(auroc(&set(&[3.0, 1.0, 2.0], &[2.0, 0.0])).unwrap(), 0.75);
}

#[test]
fn group_accuracy_follows_terciles() {
    let profile = ClassProfile::from_counts(vec![100, 50, 40, 30, 20, 10]).unwrap();
    let groups = class_groups(&profile);
    assert_eq!(
        groups,
        vec![Group::Head, Group::Head, Group::Medium, Group::Medium, Group::Tail, Group::Tail]
    );
    let labels = [0, 1, 2, 3, 4, 5];
    let preds = [0, 0, 2, 0, 4, 4];
    let acc = group_accuracy(&preds, &labels, &profile).unwrap();
    assert_eq!(acc.head, Some(0.5));
    assert_eq!(acc.medium, Some(0.5));
    assert_eq!(acc.tail, Some(0.5));
    let none = group_accuracy(&[0], &[0], &profile).unwrap();
    assert_eq!(none.tail, None);
}
