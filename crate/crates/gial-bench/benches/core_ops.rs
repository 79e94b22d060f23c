use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use gial_bench::bench_dataset;
use gial_core::encoders::{Encoder, EncoderConfig, EncoderKind};
use gial_core::{GraphContext, Matrix, Tape};

fn matmul_forward_backward(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = Matrix::uniform(64, 64, -1.0, 1.0, &mut rng);
    let b = Matrix::uniform(64, 64, -1.0, 1.0, &mut rng);
    c.bench_function("matmul_64x64_forward_backward", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let x = tape.param(&a);
            let y = tape.param(&b);
            let prod = tape.matmul(x, y).unwrap();
            let loss = tape.mean(prod).unwrap();
            tape.backward(loss).unwrap();
            black_box(tape.grad(x).unwrap()[0]);
        })
    });
}

fn normalized_adjacency(c: &mut Criterion) {
    let data = bench_dataset(256);
    c.bench_function("normalized_adjacency_n256", |bench| {
        bench.iter(|| black_box(data.graph.normalized_adjacency()))
    });
}

fn encoder_forward(c: &mut Criterion) {
    let data = bench_dataset(256);
    for kind in [EncoderKind::Gcn, EncoderKind::Gat] {
        let cfg = EncoderConfig {
            kind,
            layers: 2,
            hidden_dim: 16,
            attention_heads: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let encoder = Encoder::init(&cfg, data.features.cols(), &mut rng).unwrap();
        let ctx = GraphContext::new(&data.graph, kind);
        c.bench_function(&format!("encoder_forward_n256_{kind:?}"), |bench| {
            bench.iter_batched(
                Tape::new,
                |mut tape| {
                    let mut bctx = ctx.bind(&mut tape);
                    let bound = encoder.bind(&mut tape, false);
                    let x = tape.constant(&data.features);
                    black_box(bound.forward(&mut tape, x, &mut bctx).unwrap());
                },
                BatchSize::SmallInput,
            )
        });
    }
}

criterion_group!(
    benches,
    matmul_forward_backward,
    normalized_adjacency,
    encoder_forward
);
criterion_main!(benches);
