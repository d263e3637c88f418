//! Multi-seed experiment execution: rayon over seeds vs the sequential
//! fallback. Build with and without the `parallel` feature to compare the
//! default path too.

use criterion::{criterion_group, criterion_main, Criterion};
use manip_harness::config::{Method, RunConfig};
use manip_harness::experiment::{run_seeds, run_seeds_sequential};

const CONFIG: &str = r#"
    seeds = [1, 2, 3, 4, 5, 6]
    methods = ["base", "weight"]
    [data]
    source = "blobs"
    pool_per_class = 300
    [protocol]
    kind = "imbalanced"
    minority = 20
    majority = 100
    val_per_class = 10
    test_per_class = 100
    [model]
    kind = "logistic"
    [trainer]
    epochs = 2
    batch_size = 16
"#;

fn bench_multi_seed(c: &mut Criterion) {
    let config = RunConfig::from_toml_str(CONFIG, "bench").unwrap();
    let seeds = config.seed_list();
    let methods = [Method::Base, Method::Weight];

    let mut group = c.benchmark_group("multi_seed");
    group.sample_size(10);
    group.bench_function("default", |b| {
        b.iter(|| run_seeds(&config, &seeds, &methods, None))
    });
    group.bench_function("sequential", |b| {
        b.iter(|| run_seeds_sequential(&config, &seeds, &methods, None))
    });
    group.finish();
}

criterion_group!(benches, bench_multi_seed);
criterion_main!(benches);
