//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! The criteria pin gradient integrity against the finite-difference oracle,
//! the combinatorial edge-census closed forms, qualitative training behavior
//! (mutual-information separation, ablation ordering), forced loss values at
//! the uninformative point, metric identities, byte-level determinism, and
//! the generator's homophily patterns.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gial_core::datagen::{generate, split, GenConfig};
use gial_core::encoders::{EncoderConfig, EncoderKind, GraphContext};
use gial_core::infomax::{corrupt, mi_loss, mi_scores, MiDiscriminator};
use gial_core::metrics::{eps_ate, sqrt_pehe};
use gial_core::model::{GialModel, ModelConfig, ObjectiveInputs};
use gial_core::numerics::{grad_check, Matrix, Tape};
use gial_core::outcome::{
    adversarial_loss, BalancedBatch, CfConfig, DiscriminatorProbs, OutcomeConfig,
};
use gial_core::training::{ablate, train, AblationVariant, TrainConfig, Trainer};
use gial_core::Graph;

fn criterion(number: u32, name: &str, pass: bool) {
    println!(
        "criterion {number} ({name}): {}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {number} ({name}) failed");
}

/// Criterion 1: on a random 10-node graph with 8-dim representations, every
/// parameter's analytic gradient of the full joint objective matches central
/// finite differences with relative error below 1e-4, for both encoders.
#[test]
fn criterion_1_gradient_integrity() {
    let started = std::time::Instant::now();
    let n = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(0.4) {
                edges.push((u, v));
            }
        }
    }
    let graph = Graph::new(n, edges).unwrap();
    let features = Matrix::uniform(n, 6, -1.0, 1.0, &mut rng);
    let treatment: Vec<u8> = vec![1, 0, 1, 0, 1, 0, 1, 0, 1, 0];
    let observed: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let factual_units: Vec<usize> = (0..n).collect();
    let batch = BalancedBatch::draw(&treatment, &factual_units, &mut rng).unwrap();
    let corrupted = corrupt(&features, &mut rng);

    let mut worst = 0.0f64;
    for kind in [EncoderKind::Gcn, EncoderKind::Gat] {
        let config = ModelConfig {
            encoder: EncoderConfig {
                kind,
                layers: 2,
                hidden_dim: 8,
                attention_heads: 2,
            },
            generator: OutcomeConfig {
                head_layers: 2,
                shared_layers: 0,
                hidden_dim: 8,
            },
            discriminator: CfConfig {
                layers: 2,
                hidden_dim: 8,
            },
            alpha: 0.05,
            beta: 0.05,
        };
        let mut init_rng = ChaCha8Rng::seed_from_u64(7);
        let model = GialModel::init(&config, 6, &mut init_rng).unwrap();
        let context = GraphContext::new(&graph, kind);
        let params = model.snapshot();
        let report = grad_check(
            |tape, ids| {
                let bound = model.bound_from_ids(ids)?;
                bound.objective(
                    tape,
                    &ObjectiveInputs {
                        features: &features,
                        corrupted: Some(&corrupted.features),
                        context: &context,
                        treatment: &treatment,
                        observed: &observed,
                        factual_units: &factual_units,
                        batch: Some(&batch),
                    },
                )
            },
            &params,
        )
        .unwrap();
        println!(
            "  {kind:?}: {} parameters checked, max relative error {:.3e}",
            params.len(),
            report.max_rel_error
        );
        worst = worst.max(report.max_rel_error);
    }
    let elapsed = started.elapsed().as_secs_f64();
    println!("  runtime {elapsed:.1} s");
    criterion(1, "gradient integrity", worst < 1e-4 && elapsed < 60.0);
}

/// Criterion 2: the edge census on complete graphs with an even split equals
/// the closed forms n^2/4 - n/2 (homogeneous) and n^2/4 (heterogeneous).
#[test]
fn criterion_2_combinatorial_census_oracle() {
    let started = std::time::Instant::now();
    let mut ok = true;
    for n in [4usize, 6, 8, 10] {
        let graph = Graph::complete(n);
        let treatment: Vec<u8> = (0..n).map(|i| u8::from(i < n / 2)).collect();
        let census = graph.edge_census(&treatment).unwrap();

        // Brute-force oracle over all unordered pairs.
        let mut homogeneous = 0u64;
        let mut heterogeneous = 0u64;
        for u in 0..n {
            for v in u + 1..n {
                if treatment[u] == treatment[v] {
                    homogeneous += 1;
                } else {
                    heterogeneous += 1;
                }
            }
        }
        let nf = n as f64;
        let expected_homogeneous = (nf * nf / 4.0 - nf / 2.0) as u64;
        let expected_heterogeneous = (nf * nf / 4.0) as u64;
        ok &= census.homogeneous_count == expected_homogeneous
            && census.heterogeneous_count == expected_heterogeneous
            && census.homogeneous_count == homogeneous
            && census.heterogeneous_count == heterogeneous;
        println!(
            "  K_{n}: homogeneous {} (closed form {}), heterogeneous {} (closed form {})",
            census.homogeneous_count,
            expected_homogeneous,
            census.heterogeneous_count,
            expected_heterogeneous
        );
    }
    ok &= started.elapsed().as_secs_f64() < 1.0;
    criterion(2, "combinatorial census oracle", ok);
}

/// Criterion 3: after MI-only training on a 50-node homophilous graph, the
/// probe scores genuine nodes above corrupted ones in at least 4 of 5 seeds.
#[test]
fn criterion_3_mi_training_separates_scores() {
    let started = std::time::Instant::now();
    let mut wins = 0;
    for seed in 0..5u64 {
        let dataset = generate(&GenConfig {
            nodes: 50,
            topic_dim: 4,
            feature_dim: 12,
            homophily: 2.0,
            bias: 0.0,
            edge_density: 0.15,
            outcome_noise: 0.5,
            seed: 900 + seed,
        })
        .unwrap();
        // MI-only: positive alpha, zero beta, and only maximizer steps so the
        // factual loss never trains.
        let config = TrainConfig {
            alpha: 1e-1,
            beta: 0.0,
            rep_dim: 8,
            encoder_layers: 1,
            generator_layers: 1,
            discriminator_layers: 1,
            max_epochs: 200,
            patience: 200,
            seed,
            ..TrainConfig::default()
        };
        let splits = split(dataset.n(), (0.6, 0.2, 0.2), seed).unwrap();
        let mut trainer = Trainer::new(&dataset, splits, &config).unwrap();
        for _ in 0..200 {
            let batch = trainer.draw_batch().unwrap();
            trainer.maximizer_step(&batch).unwrap();
        }

        // Score fresh positive and corrupted batches under the trained model.
        let model = trainer.model();
        let context = GraphContext::new(&dataset.graph, EncoderKind::Gcn);
        let mut eval_rng = ChaCha8Rng::seed_from_u64(7_000 + seed);
        let corrupted = corrupt(&dataset.features, &mut eval_rng);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false);
        let mut bctx = context.bind(&mut tape);
        let x = tape.constant(&dataset.features);
        let x_neg = tape.constant(&corrupted.features);
        let r_pos = bound.encoder.forward(&mut tape, x, &mut bctx).unwrap();
        let r_neg = bound.encoder.forward(&mut tape, x_neg, &mut bctx).unwrap();
        let summary = gial_core::encoders::summary_readout(&mut tape, r_pos).unwrap();
        let pos = mi_scores(&mut tape, r_pos, summary, &bound.mi).unwrap();
        let neg = mi_scores(&mut tape, r_neg, summary, &bound.mi).unwrap();
        let mean = |id| {
            let v = tape.values(id);
            v.iter().sum::<f64>() / v.len() as f64
        };
        let (pos_mean, neg_mean) = (mean(pos), mean(neg));
        println!("  seed {seed}: mean score positives {pos_mean:.4}, corrupted {neg_mean:.4}");
        if pos_mean > neg_mean {
            wins += 1;
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    println!("  {wins}/5 seeds separated, runtime {elapsed:.1} s");
    criterion(
        3,
        "mutual-information separation",
        wins >= 4 && elapsed < 300.0,
    );
}

/// Criterion 4: with every discriminator score forced to 0.5, the MI loss is
/// ln(1/2) and the adversarial loss is ln 2, to 1e-9.
#[test]
fn criterion_4_uninformative_point_forces_loss_values() {
    let n = 12;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let representations = Matrix::uniform(n, 5, -2.0, 2.0, &mut rng);
    let negatives = Matrix::uniform(n, 5, -2.0, 2.0, &mut rng);

    // Zero scoring matrix forces every probe output to sigmoid(0) = 1/2.
    let disc = MiDiscriminator {
        weight: Matrix::zeros(5, 5),
    };
    let mut tape = Tape::new();
    let bound = disc.bind(&mut tape, false);
    let pos = tape.constant(&representations);
    let neg = tape.constant(&negatives);
    let summary = gial_core::encoders::summary_readout(&mut tape, pos).unwrap();
    let mi = mi_loss(&mut tape, pos, neg, summary, &bound).unwrap();
    let mi_err = (tape.scalar(mi) - 0.5f64.ln()).abs();

    // Constant-1/2 probability columns force the cross-entropy to ln 2.
    let half = tape.constant(&Matrix::filled(4, 1, 0.5));
    let probs = DiscriminatorProbs {
        factual_treated: half,
        counterfactual_treated: half,
        factual_control: half,
        counterfactual_control: half,
    };
    let adv = adversarial_loss(&mut tape, &probs, true).unwrap();
    let adv_err = (tape.scalar(adv) - 2.0f64.ln()).abs();

    println!("  |L_mi - ln 0.5| = {mi_err:.2e}, |L_adv - ln 2| = {adv_err:.2e}");
    criterion(
        4,
        "uninformative-point loss values",
        mi_err < 1e-9 && adv_err < 1e-9,
    );
}

/// Criterion 6: the ATE error never exceeds the root PEHE (mean versus RMS
/// of the same error vector), and both vanish on perfect estimates.
#[test]
fn criterion_6_metric_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut ok = true;
    for _ in 0..1000 {
        let n = rng.gen_range(1..50);
        let truth: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let estimate: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let ate_err = eps_ate(&truth, &estimate).unwrap();
        let pehe = sqrt_pehe(&truth, &estimate).unwrap();
        ok &= ate_err <= pehe + 1e-12;
        let perfect_ate = eps_ate(&truth, &truth).unwrap();
        let perfect_pehe = sqrt_pehe(&truth, &truth).unwrap();
        ok &= perfect_ate == 0.0 && perfect_pehe == 0.0;
    }
    criterion(6, "metric identities", ok);
}

/// Criterion 7: identical seeds and configurations give byte-identical
/// artifacts for generation, training, ablation and sweeps (runtime fields
/// excluded).
#[test]
fn criterion_7_determinism() {
    let gen_config = GenConfig {
        nodes: 80,
        topic_dim: 4,
        feature_dim: 12,
        edge_density: 0.06,
        seed: 55,
        ..GenConfig::default()
    };
    let train_config = TrainConfig {
        rep_dim: 8,
        encoder_layers: 1,
        generator_layers: 1,
        discriminator_layers: 1,
        max_epochs: 6,
        patience: 6,
        seed: 55,
        ..TrainConfig::default()
    };
    let mut ok = true;

    let d1 = generate(&gen_config).unwrap();
    let d2 = generate(&gen_config).unwrap();
    ok &= d1 == d2;

    let t1 = train(&d1, &train_config).unwrap();
    let t2 = train(&d1, &train_config).unwrap();
    ok &= t1.trace == t2.trace && t1.model.snapshot() == t2.model.snapshot();
    ok &= t1.trace.to_csv() == t2.trace.to_csv();

    let normalize = |mut r: gial_core::MetricsReport| {
        r.runtime_seconds = 0.0;
        r
    };
    for variant in [
        AblationVariant::Full,
        AblationVariant::NoSmi,
        AblationVariant::NoCd,
    ] {
        let (r1, tr1) = ablate(&d1, &train_config, variant).unwrap();
        let (r2, tr2) = ablate(&d1, &train_config, variant).unwrap();
        ok &= normalize(r1) == normalize(r2) && tr1 == tr2;
    }

    let s1 = gial_core::sensitivity_sweep(&d1, &train_config, &[0.0, 0.01], &[0.01]).unwrap();
    let s2 = gial_core::sensitivity_sweep(&d1, &train_config, &[0.0, 0.01], &[0.01]).unwrap();
    ok &= s1.len() == s2.len()
        && s1
            .iter()
            .zip(&s2)
            .all(|(a, b)| normalize(a.report.clone()) == normalize(b.report.clone()));

    criterion(7, "determinism", ok);
}

/// Criterion 8: without homophily the census ratio sits within three
/// sampling standard errors of the complete-graph null ratio; with strong
/// homophily and bias, homogeneous edges dominate in at least 9 of 10 seeds.
#[test]
fn criterion_8_datagen_homophily() {
    let mut ratios = Vec::new();
    for seed in 0..10u64 {
        let data = generate(&GenConfig {
            nodes: 600,
            homophily: 0.0,
            bias: 0.0,
            edge_density: 0.05,
            seed: 300 + seed,
            ..GenConfig::default()
        })
        .unwrap();
        let census = data.graph.edge_census(&data.treatment).unwrap();
        ratios.push(census.observed_ratio().unwrap());
    }
    let null = {
        let n = 600.0f64;
        (n * n / 4.0 - n / 2.0) / (n * n / 4.0)
    };
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let var =
        ratios.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (ratios.len() - 1) as f64;
    let se = (var / ratios.len() as f64).sqrt();
    let neutral_ok = (mean - null).abs() <= 3.0 * se;
    println!(
        "  h=0: mean ratio {mean:.4} vs null {null:.4} (3 SE = {:.4})",
        3.0 * se
    );

    let mut dominated = 0;
    for seed in 0..10u64 {
        let data = generate(&GenConfig {
            nodes: 600,
            homophily: 2.0,
            bias: 2.0,
            edge_density: 0.05,
            seed: 400 + seed,
            ..GenConfig::default()
        })
        .unwrap();
        let census = data.graph.edge_census(&data.treatment).unwrap();
        if census.homogeneous_count > census.heterogeneous_count {
            dominated += 1;
        }
    }
    println!("  h=2, k=2: homogeneous majority in {dominated}/10 seeds");
    criterion(
        8,
        "generator homophily patterns",
        neutral_ok && dominated >= 9,
    );
}

/// Criterion 5 helper: seed-mean test root PEHE per ablation variant.
fn ablation_means(bias: f64, seeds: &[u64], config: &TrainConfig) -> [f64; 3] {
    let mut sums = [0.0f64; 3];
    for &seed in seeds {
        let dataset = generate(&GenConfig {
            nodes: 500,
            topic_dim: 8,
            feature_dim: 50,
            homophily: 2.0,
            bias,
            edge_density: 0.02,
            outcome_noise: 0.5,
            seed,
        })
        .unwrap();
        let cfg = TrainConfig {
            seed,
            ..config.clone()
        };
        for (slot, variant) in [
            AblationVariant::Full,
            AblationVariant::NoSmi,
            AblationVariant::NoCd,
        ]
        .into_iter()
        .enumerate()
        {
            let (report, _) = ablate(&dataset, &cfg, variant).unwrap();
            sums[slot] += report.sqrt_pehe;
        }
    }
    sums.map(|s| s / seeds.len() as f64)
}

/// Criterion 5: ablation ordering at desk scale. On homophilous confounded
/// data, the full model's seed-mean test root PEHE does not exceed either
/// ablation's, and removing the counterfactual discriminator costs more at
/// k=2 than at k=0.5.
#[test]
fn criterion_5_ablation_ordering() {
    let started = std::time::Instant::now();
    let config = TrainConfig {
        alpha: 1e-1,
        beta: 1e-1,
        rep_dim: 16,
        encoder_layers: 2,
        generator_layers: 2,
        discriminator_layers: 3,
        discriminator_steps: 3,
        max_epochs: 600,
        patience: 150,
        ..TrainConfig::default()
    };
    let seeds: Vec<u64> = (0..8).collect();

    let [full_low, no_smi_low, no_cd_low] = ablation_means(0.5, &seeds, &config);
    let [full_high, no_smi_high, no_cd_high] = ablation_means(2.0, &seeds, &config);
    let gap_low = no_cd_low - full_low;
    let gap_high = no_cd_high - full_high;

    println!("  k=0.5: full {full_low:.4}, no_smi {no_smi_low:.4}, no_cd {no_cd_low:.4}");
    println!("  k=2.0: full {full_high:.4}, no_smi {no_smi_high:.4}, no_cd {no_cd_high:.4}");
    println!("  discriminator-removal gap: {gap_low:.4} at k=0.5, {gap_high:.4} at k=2.0");
    println!("  runtime {:.0} s", started.elapsed().as_secs_f64());

    let ordering = full_low <= no_smi_low
        && full_low <= no_cd_low
        && full_high <= no_smi_high
        && full_high <= no_cd_high;
    let gap_grows = gap_high > gap_low;
    let in_time = started.elapsed().as_secs_f64() < 1800.0;
    criterion(5, "ablation ordering", ordering && gap_grows && in_time);
}
