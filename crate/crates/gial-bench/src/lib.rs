//! Shared fixtures for the benchmark targets.

use gial_core::{generate, Dataset, GenConfig};

/// A homophilous, confounded dataset sized for benchmarking.
pub fn bench_dataset(nodes: usize) -> Dataset {
    generate(&GenConfig {
        nodes,
        topic_dim: 8,
        feature_dim: 32,
        homophily: 2.0,
        bias: 1.0,
        edge_density: 0.03,
        outcome_noise: 1.0,
        seed: 97,
    })
    .expect("benchmark dataset generates")
}
