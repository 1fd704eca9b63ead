//! Parallel vs sequential throughput of the two hot loops: batch gradients
//! and filtered evaluation.
//!
//! `cargo bench -p codlr` compares a one-thread pool against the default
//! pool; `cargo bench -p codlr --no-default-features` runs the sequential
//! build for the same workloads.

use codlr::data::{self, SynthSpec};
use codlr::trainer::batch_gradient;
use codlr::{metrics, par, Split, TrainConfig, Trainer, TripleStore};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn setup() -> (tempfile::TempDir, TripleStore, Trainer) {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        cluster_count: 4,
        entities_per_cluster: 60,
        noise_rate: 0.05,
        ..SynthSpec::default()
    };
    data::generate_synthetic(&spec, dir.path()).unwrap();
    let store = data::load_dir(dir.path()).unwrap();
    let config = TrainConfig {
        dim: 64,
        dict_size: 4,
        batch_size: 128,
        ..TrainConfig::default()
    };
    let trainer = Trainer::new(config, &store).unwrap();
    (dir, store, trainer)
}

fn pools() -> Vec<(&'static str, Option<usize>)> {
    if par::PARALLEL {
        vec![("1-thread", Some(1)), ("default-pool", None)]
    } else {
        vec![("sequential", None)]
    }
}

fn bench(c: &mut Criterion) {
    let (_dir, store, trainer) = setup();
    let pairs: Vec<(u32, u32)> = store.train_pairs().iter().take(128).copied().collect();

    let mut g = c.benchmark_group("batch_gradient");
    for (name, workers) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                par::install(workers, || {
                    black_box(batch_gradient(&trainer.params, &trainer.config, &store, &pairs))
                })
                .unwrap()
            })
        });
    }
    g.finish();

    let mut g = c.benchmark_group("evaluate_test");
    g.sample_size(20);
    for (name, workers) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                par::install(workers, || {
                    black_box(metrics::evaluate(&trainer.params, &store, Split::Test, 0).unwrap())
                })
                .unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
