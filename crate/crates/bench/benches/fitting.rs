use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use viscal_bench::training_set;
use viscal_core::{mlp_fit, polr_fit, FeatureConfig, MlpArchitecture, TrainOptions};

fn fitting(c: &mut Criterion) {
    let mask = FeatureConfig::with_aux(false).nonnegative_mask();
    let (x, y) = training_set(1, 350, mask.len());
    let mut group = c.benchmark_group("fit");
    group.sample_size(10);
    group.bench_function("polr_350", |b| b.iter(|| polr_fit(black_box(&x), &y, &mask, &TrainOptions::polr()).unwrap()));
    let opts = TrainOptions { max_iter: 1, patience: 1, ..TrainOptions::mlp() };
    group.bench_function("mlp_epoch_350", |b| {
        b.iter(|| mlp_fit(black_box(&x), &y, &MlpArchitecture::default(), &opts).unwrap())
    });
    group.finish();
}

criterion_group!(benches, fitting);
criterion_main!(benches);
