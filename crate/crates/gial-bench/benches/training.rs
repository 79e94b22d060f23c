use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use gial_bench::bench_dataset;
use gial_core::{generate, split, GenConfig, TrainConfig, Trainer};

fn epoch_step(c: &mut Criterion) {
    let data = bench_dataset(128);
    let cfg = TrainConfig {
        rep_dim: 16,
        max_epochs: 1,
        patience: 1,
        ..TrainConfig::default()
    };
    c.bench_function("train_epoch_n128", |bench| {
        bench.iter_batched(
            || {
                let splits = split(data.n(), (0.6, 0.2, 0.2), cfg.seed).unwrap();
                Trainer::new(&data, splits, &cfg).unwrap()
            },
            |mut trainer| black_box(trainer.epoch().unwrap()),
            BatchSize::SmallInput,
        )
    });
}

fn dataset_generation(c: &mut Criterion) {
    let cfg = GenConfig {
        nodes: 256,
        seed: 7,
        ..GenConfig::default()
    };
    c.bench_function("generate_n256", |bench| {
        bench.iter(|| black_box(generate(&cfg).unwrap()))
    });
}

criterion_group!(benches, epoch_step, dataset_generation);
criterion_main!(benches);
