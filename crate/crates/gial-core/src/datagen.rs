//! Synthetic networked observational data with known ground truth.
//!
//! The generator plants a latent topic vector per node (the hidden
//! confounder), projects it into observable features through a sparse
//! nonnegative map plus noise, wires edges with probability increasing in
//! latent similarity (homophily), assigns treatment through a propensity
//! that reads the node's latent vector aggregated with its neighbors', and
//! produces smooth potential outcome surfaces over the same aggregate. The
//! bias knob scales the propensity logits: zero means random assignment,
//! larger values concentrate treatment along the confounding direction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::numerics::Matrix;

/// Sparsity of the latent-to-feature projection.
const PROJECTION_DENSITY: f64 = 0.3;
/// Noise on latent coordinates around the topic centers.
const LATENT_NOISE: f64 = 0.25;
/// Noise added to projected features.
const FEATURE_NOISE: f64 = 0.5;
/// Baseline outcome surface: linear and curvature terms over the
/// standardized confounder score.
const OUTCOME_LINEAR: f64 = 2.0;
const OUTCOME_CURVATURE: f64 = 1.0;
/// Effect surface: mean shift plus heterogeneous modulation; part of the
/// effect rides the confounder itself, so selection bias that survives
/// adjustment corrupts per-unit effect estimates, not just their mean.
const EFFECT_MEAN: f64 = 1.0;
const EFFECT_HETEROGENEITY: f64 = 2.0;
const EFFECT_CONFOUNDING: f64 = 1.0;
/// Assignment-score mixture: the confounder share keeps assignment and
/// outcomes genuinely entangled, the instrument share biases assignment
/// along a direction the outcomes never read.
const ASSIGN_CONFOUNDER_WEIGHT: f64 = 1.0;
const ASSIGN_INSTRUMENT_WEIGHT: f64 = 0.0;
/// Propensity logit scale per unit of bias; at larger bias values the
/// treated and control supports separate quickly.
const PROPENSITY_SHARPNESS: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub nodes: usize,
    /// Width of the hidden confounder vectors.
    pub topic_dim: usize,
    pub feature_dim: usize,
    /// Homophily strength: 0 wires edges independently of the latent space.
    pub homophily: f64,
    /// Selection-bias magnitude: 0 gives every unit propensity 1/2.
    pub bias: f64,
    /// Target fraction of node pairs connected.
    pub edge_density: f64,
    /// Standard deviation of the observation noise on factual outcomes.
    pub outcome_noise: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            nodes: 500,
            topic_dim: 8,
            feature_dim: 50,
            homophily: 1.0,
            bias: 1.0,
            edge_density: 0.02,
            outcome_noise: 1.0,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 || self.topic_dim == 0 || self.feature_dim == 0 {
            return Err(Error::contract("generator dimensions must be positive"));
        }
        if self.homophily < 0.0 || self.bias < 0.0 {
            return Err(Error::contract("homophily and bias must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.edge_density) {
            return Err(Error::contract("edge_density must lie in [0, 1]"));
        }
        if self.outcome_noise < 0.0 {
            return Err(Error::contract("outcome_noise must be nonnegative"));
        }
        Ok(())
    }
}

// Distinct rng streams per ingredient, so that changing the bias knob leaves
// the latent vectors, features and edges of a seed untouched.
const STREAM_LATENT: u64 = 1;
const STREAM_PROJECTION: u64 = 2;
const STREAM_FEATURES: u64 = 3;
const STREAM_EDGES: u64 = 4;
const STREAM_COEFFICIENTS: u64 = 5;
const STREAM_TREATMENT: u64 = 6;
const STREAM_OUTCOME_NOISE: u64 = 7;
const STREAM_SPLIT: u64 = 8;

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard normal via Box-Muller; one draw consumes two uniforms.
fn normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn standardize(values: &mut [f64]) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd == 0.0 {
        for v in values.iter_mut() {
            *v = 0.0;
        }
    } else {
        for v in values.iter_mut() {
            *v = (*v - mean) / sd;
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Generates one dataset. Ground-truth potential outcome surfaces and the
/// latent confounders ride along for evaluation; models only ever see the
/// features, the graph, the assignments and the factual outcomes.
pub fn generate(config: &GenConfig) -> Result<Dataset> {
    config.validate()?;
    let n = config.nodes;
    let k = config.topic_dim;

    // Latent confounders: noisy one-hot topic memberships.
    let mut rng = stream(config.seed, STREAM_LATENT);
    let mut latent = Matrix::zeros(n, k);
    for i in 0..n {
        let topic = rng.gen_range(0..k);
        for j in 0..k {
            let center = if j == topic { 1.0 } else { 0.0 };
            latent[(i, j)] = center + LATENT_NOISE * normal(&mut rng);
        }
    }

    // Sparse nonnegative projection into feature space, plus noise.
    let mut rng = stream(config.seed, STREAM_PROJECTION);
    let mut projection = Matrix::zeros(k, config.feature_dim);
    for i in 0..k {
        for j in 0..config.feature_dim {
            if rng.gen_bool(PROJECTION_DENSITY) {
                projection[(i, j)] = normal(&mut rng).abs();
            }
        }
    }
    let mut rng = stream(config.seed, STREAM_FEATURES);
    let mut features = Matrix::zeros(n, config.feature_dim);
    for i in 0..n {
        for j in 0..config.feature_dim {
            let mut acc = 0.0;
            for t in 0..k {
                acc += latent[(i, t)] * projection[(t, j)];
            }
            features[(i, j)] = acc + FEATURE_NOISE * normal(&mut rng);
        }
    }

    // Homophilous edges: pair weight exp(h * <z_i, z_j>), rescaled so the
    // mean connection probability matches the density target.
    let mut rng = stream(config.seed, STREAM_EDGES);
    let graph = if n == 1 {
        Graph::new(1, vec![])?
    } else {
        let similarity = |i: usize, j: usize| -> f64 {
            let mut dot = 0.0;
            for t in 0..k {
                dot += latent[(i, t)] * latent[(j, t)];
            }
            dot
        };
        let mut weight_sum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                weight_sum += (config.homophily * similarity(i, j)).exp();
            }
        }
        let pairs = (n * (n - 1) / 2) as f64;
        let mean_weight = weight_sum / pairs;
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let p = (config.edge_density * (config.homophily * similarity(i, j)).exp()
                    / mean_weight)
                    .min(1.0);
                // One uniform per pair keeps the stream aligned across knobs.
                let u: f64 = rng.gen_range(0.0..1.0);
                if u < p {
                    edges.push((i, j));
                }
            }
        }
        Graph::new(n, edges)?
    };
    if graph.edge_count() == 0 && config.edge_density > 0.0 && n > 1 {
        eprintln!(
            "warning: generated graph has no edges (density {})",
            config.edge_density
        );
    }

    // Node aggregate: own latent mixed with the one-hop neighbor mean. The
    // neighbor share dominates, so the confounder is carried primarily by
    // the network structure rather than by any single node's features.
    let mut aggregate = Matrix::zeros(n, k);
    for i in 0..n {
        let neighbors = graph.neighbors(i);
        if neighbors.is_empty() {
            for t in 0..k {
                aggregate[(i, t)] = latent[(i, t)];
            }
        } else {
            for t in 0..k {
                let neigh_mean: f64 =
                    neighbors.iter().map(|&j| latent[(j, t)]).sum::<f64>() / neighbors.len() as f64;
                aggregate[(i, t)] = 0.3 * latent[(i, t)] + 0.7 * neigh_mean;
            }
        }
    }

    // Three directions over the aggregate: the confounder drives both
    // assignment and the baseline outcome, the instrument direction drives
    // assignment only, and a third direction modulates the effect size.
    let mut rng = stream(config.seed, STREAM_COEFFICIENTS);
    let mut conf_dir: Vec<f64> = (0..k).map(|_| normal(&mut rng)).collect();
    let mut het_dir: Vec<f64> = (0..k).map(|_| normal(&mut rng)).collect();
    let mut inst_dir: Vec<f64> = (0..k).map(|_| normal(&mut rng)).collect();
    for dir in [&mut conf_dir, &mut het_dir, &mut inst_dir] {
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for v in dir.iter_mut() {
            *v /= norm;
        }
    }

    let project = |dir: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| (0..k).map(|t| dir[t] * aggregate[(i, t)]).sum())
            .collect()
    };
    let mut confounder = project(&conf_dir);
    standardize(&mut confounder);
    let mut heterogeneity = project(&het_dir);
    standardize(&mut heterogeneity);
    let mut instrument = project(&inst_dir);
    standardize(&mut instrument);

    // Propensity reads the confounder plus the instrument; only the
    // confounder part returns in the outcome surfaces.
    let mut assignment_score: Vec<f64> = (0..n)
        .map(|i| {
            ASSIGN_CONFOUNDER_WEIGHT * confounder[i] + ASSIGN_INSTRUMENT_WEIGHT * instrument[i]
        })
        .collect();
    standardize(&mut assignment_score);
    let mut rng = stream(config.seed, STREAM_TREATMENT);
    let treatment: Vec<u8> = (0..n)
        .map(|i| {
            let propensity = sigmoid(config.bias * PROPENSITY_SHARPNESS * assignment_score[i]);
            let u: f64 = rng.gen_range(0.0..1.0);
            u8::from(u < propensity)
        })
        .collect();

    let mu0: Vec<f64> = (0..n)
        .map(|i| OUTCOME_LINEAR * confounder[i] + OUTCOME_CURVATURE * confounder[i] * confounder[i])
        .collect();
    let mu1: Vec<f64> = (0..n)
        .map(|i| {
            mu0[i]
                + EFFECT_MEAN
                + EFFECT_HETEROGENEITY * heterogeneity[i]
                + EFFECT_CONFOUNDING * confounder[i]
        })
        .collect();

    let mut rng = stream(config.seed, STREAM_OUTCOME_NOISE);
    let outcomes: Vec<f64> = (0..n)
        .map(|i| {
            let mu = if treatment[i] == 1 { mu1[i] } else { mu0[i] };
            mu + config.outcome_noise * normal(&mut rng)
        })
        .collect();

    Ok(Dataset {
        features,
        graph,
        treatment,
        outcomes,
        mu0: Some(mu0),
        mu1: Some(mu1),
        latent: Some(latent),
        gen_config: Some(config.clone()),
    })
}

/// Disjoint, exhaustive, seed-deterministic index sets. The graph itself is
/// never split; only supervision is restricted to the training indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Randomly partitions `0..n` by the given fractions (which must sum to 1).
/// Every split must end up non-empty.
pub fn split(n: usize, fractions: (f64, f64, f64), seed: u64) -> Result<SplitIndices> {
    let (f_train, f_val, f_test) = fractions;
    if f_train <= 0.0 || f_val <= 0.0 || f_test <= 0.0 {
        return Err(Error::contract("split fractions must be positive"));
    }
    if (f_train + f_val + f_test - 1.0).abs() > 1e-9 {
        return Err(Error::contract("split fractions must sum to 1"));
    }
    let n_train = (f_train * n as f64).floor() as usize;
    let n_val = (f_val * n as f64).floor() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::contract(format!(
            "{n} units are too few to populate a {f_train}/{f_val}/{f_test} split"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream(seed, STREAM_SPLIT);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut train = order[..n_train].to_vec();
    let mut val = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, val, test })
}
