use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use ricasso_bench::{score_set, LossWorkload};
use ricasso_core::eval::{auroc, fpr_at_tpr};

fn training_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("training_step");
    for pairs in [16, 64] {
        let w = LossWorkload::new(10, pairs, 0).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(pairs), &w, |b, w| {
            b.iter(|| black_box(w.step().unwrap()))
        });
    }
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let mut group = c.benchmark_group("metrics");
    for n in [1_000, 10_000] {
        let s = score_set(n, 1, false);
        group.bench_with_input(BenchmarkId::new("auroc", n), &s, |b, s| b.iter(|| black_box(auroc(s).unwrap())));
        group.bench_with_input(BenchmarkId::new("fpr95", n), &s, |b, s| {
            b.iter(|| black_box(fpr_at_tpr(s, 0.95).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, training_step, metrics);
criterion_main!(benches);
