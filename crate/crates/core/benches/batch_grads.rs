//! Per-example gradient computation: rayon pool vs sequential replay.
//!
//! Run with `cargo bench -p manip-core` (the default `parallel` feature
//! routes `per_example_grads` through rayon) and compare against the
//! always-sequential variant.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use manip_core::data::{default_blob_means, gen_blobs};
use manip_core::model::{ClassifierParams, ModelKind};

fn bench_per_example_grads(c: &mut Criterion) {
    let mut group = c.benchmark_group("per_example_grads");
    for &batch in &[16usize, 64, 256] {
        let d = gen_blobs(1, &[batch / 2, batch / 2], &default_blob_means(2, 8, 1.0), 1.0).unwrap();
        let (x, y) = d.full_matrix().unwrap();
        let model = ClassifierParams::init(ModelKind::Mlp { hidden: 16 }, 8, 2, 3).unwrap();

        group.bench_with_input(BenchmarkId::new("default", batch), &batch, |b, _| {
            b.iter(|| model.per_example_grads(&x, &y).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("sequential", batch), &batch, |b, _| {
            b.iter(|| model.per_example_grads_seq(&x, &y).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_per_example_grads);
criterion_main!(benches);
