//! The minimax training loop: alternating maximizer/minimizer updates,
//! early stopping on a validation criterion, ablation switches, and the
//! alpha/beta sensitivity sweep.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{split, SplitIndices};
use crate::dataset::Dataset;
use crate::encoders::{EncoderConfig, EncoderKind, GraphContext};
use crate::error::{Error, Result};
use crate::infomax::corrupt;
use crate::metrics::{eps_ate, fingerprint, sqrt_pehe, MetricsReport, SplitMse};
use crate::model::{GialModel, LossValues, ModelConfig, ObjectiveInputs, ParamGroup, ParamKind};
use crate::numerics::{AdamConfig, AdamState, Matrix, Tape};
use crate::outcome::{BalancedBatch, CfConfig, OutcomeConfig, PotentialOutcomes};

/// What early stopping monitors on the validation split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationCriterion {
    /// Mean squared factual-outcome error; the default, since ground-truth
    /// effects are not visible to model selection.
    FactualMse,
    /// Root PEHE against ground-truth effects; for oracle studies only.
    OraclePehe,
}

/// Everything one training run depends on. Serializes as a flat JSON
/// object; unspecified fields take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the structure mutual-information term.
    pub alpha: f64,
    /// Weight of the counterfactual-discriminator term.
    pub beta: f64,
    /// Confounder representation width.
    pub rep_dim: usize,
    pub encoder: EncoderKind,
    pub encoder_layers: usize,
    pub attention_heads: usize,
    pub generator_layers: usize,
    /// Hidden layers shared by the generator heads (0 = pure two-head).
    pub generator_shared_layers: usize,
    pub discriminator_layers: usize,
    pub learning_rate: f64,
    pub l2: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Maximizer updates per minimizer update.
    pub discriminator_steps: usize,
    /// Restrict the minimizer step to the generator alone, leaving the
    /// encoder entirely with the maximizer.
    pub strict_minimax: bool,
    pub validation: ValidationCriterion,
    /// Enforce the published hyperparameter grid.
    pub paper_faithful: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1e-2,
            beta: 1e-2,
            rep_dim: 16,
            encoder: EncoderKind::Gcn,
            encoder_layers: 2,
            attention_heads: 2,
            generator_layers: 2,
            generator_shared_layers: 0,
            discriminator_layers: 2,
            learning_rate: 1e-3,
            l2: 1e-4,
            patience: 100,
            max_epochs: 400,
            seed: 0,
            discriminator_steps: 1,
            strict_minimax: false,
            validation: ValidationCriterion::FactualMse,
            paper_faithful: false,
        }
    }
}

const TRADEOFF_GRID: [f64; 5] = [0.0, 1e-4, 1e-3, 1e-2, 1e-1];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rep_dim == 0 || self.encoder_layers == 0 || self.generator_layers == 0 {
            return Err(Error::contract("model dimensions must be positive"));
        }
        if self.patience == 0 {
            return Err(Error::contract("patience must be at least 1"));
        }
        if self.discriminator_steps == 0 {
            return Err(Error::contract("discriminator_steps must be at least 1"));
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::contract("alpha and beta must be nonnegative"));
        }
        if self.paper_faithful {
            let in_grid = |v: f64| TRADEOFF_GRID.iter().any(|g| (g - v).abs() < 1e-12);
            if !in_grid(self.alpha) || !in_grid(self.beta) {
                return Err(Error::contract(
                    "paper-faithful mode requires alpha and beta from {0, 1e-4, 1e-3, 1e-2, 1e-1}",
                ));
            }
            if ![50, 100, 150, 200].contains(&self.rep_dim) {
                return Err(Error::contract(
                    "paper-faithful mode requires rep_dim in {50, 100, 150, 200}",
                ));
            }
            if !(1..=3).contains(&self.encoder_layers) {
                return Err(Error::contract(
                    "paper-faithful mode requires 1-3 encoder layers",
                ));
            }
            if !(1..=4).contains(&self.attention_heads) {
                return Err(Error::contract(
                    "paper-faithful mode requires 1-4 attention heads",
                ));
            }
            if !(1..=4).contains(&self.generator_layers) {
                return Err(Error::contract(
                    "paper-faithful mode requires 1-4 generator layers",
                ));
            }
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                kind: self.encoder,
                layers: self.encoder_layers,
                hidden_dim: self.rep_dim,
                attention_heads: self.attention_heads,
            },
            generator: OutcomeConfig {
                head_layers: self.generator_layers,
                shared_layers: self.generator_shared_layers,
                hidden_dim: self.rep_dim,
            },
            discriminator: CfConfig {
                layers: self.discriminator_layers,
                hidden_dim: self.rep_dim,
            },
            alpha: self.alpha,
            beta: self.beta,
        }
    }

    /// Stable hash of the full configuration, for report provenance.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        fingerprint(json.as_bytes())
    }
}

/// Per-epoch loss curves and the early-stopping outcome.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainTrace {
    pub factual: Vec<f64>,
    pub mi: Vec<Option<f64>>,
    pub adversarial: Vec<Option<f64>>,
    pub validation: Vec<f64>,
    pub best_epoch: usize,
    pub saturation_events: u64,
}

impl TrainTrace {
    pub fn epochs_run(&self) -> usize {
        self.factual.len()
    }

    /// Headerless terms are left empty when their loss term is disabled.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,factual_loss,mi_loss,adversarial_loss,validation\n");
        for i in 0..self.factual.len() {
            let opt = |v: &Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                i,
                self.factual[i],
                opt(&self.mi[i]),
                opt(&self.adversarial[i]),
                self.validation[i]
            ));
        }
        out
    }
}

/// Random draws shared by the steps of one epoch: one corruption and one
/// balanced batch, each present only when its loss term is active.
pub struct EpochBatch {
    pub corrupted: Option<Matrix>,
    pub batch: Option<BalancedBatch>,
}

/// One epoch's loss values and validation criterion.
#[derive(Clone, Copy, Debug)]
pub struct EpochStats {
    pub losses: LossValues,
    pub validation: f64,
}

/// Owns a model mid-training together with the optimizer state, the
/// dataset tensors and the epoch randomness. A run is sequential and
/// single-threaded; concurrent experiments each own a trainer.
pub struct Trainer {
    model: GialModel,
    adam: AdamState,
    config: TrainConfig,
    features: Matrix,
    context: GraphContext,
    treatment: Vec<u8>,
    observed: Vec<f64>,
    true_ite: Option<Vec<f64>>,
    splits: SplitIndices,
    epoch_rng: ChaCha8Rng,
    saturation_events: u64,
}

const STREAM_INIT: u64 = 100;
const STREAM_EPOCH: u64 = 101;

impl Trainer {
    pub fn new(dataset: &Dataset, splits: SplitIndices, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        dataset.validate()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        init_rng.set_stream(STREAM_INIT);
        let model = GialModel::init(
            &config.model_config(),
            dataset.features.cols(),
            &mut init_rng,
        )?;
        let mut epoch_rng = ChaCha8Rng::seed_from_u64(config.seed);
        epoch_rng.set_stream(STREAM_EPOCH);
        let context = GraphContext::new(&dataset.graph, config.encoder);
        Ok(Trainer {
            model,
            adam: AdamState::new(AdamConfig {
                learning_rate: config.learning_rate,
                l2: config.l2,
                ..AdamConfig::default()
            }),
            config: config.clone(),
            features: dataset.features.clone(),
            context,
            treatment: dataset.treatment.clone(),
            observed: dataset.outcomes.clone(),
            true_ite: dataset.true_ite(),
            splits,
            epoch_rng,
            saturation_events: 0,
        })
    }

    pub fn model(&self) -> &GialModel {
        &self.model
    }

    pub fn splits(&self) -> &SplitIndices {
        &self.splits
    }

    pub fn saturation_events(&self) -> u64 {
        self.saturation_events
    }

    /// Draws the epoch's corruption permutation and balanced batch. Terms
    /// with zero weight draw nothing, keeping ablations self-contained.
    pub fn draw_batch(&mut self) -> Result<EpochBatch> {
        let corrupted = if self.model.alpha != 0.0 {
            Some(corrupt(&self.features, &mut self.epoch_rng).features)
        } else {
            None
        };
        let batch = if self.model.beta != 0.0 {
            Some(BalancedBatch::draw(
                &self.treatment,
                &self.splits.train,
                &mut self.epoch_rng,
            )?)
        } else {
            None
        };
        Ok(EpochBatch { corrupted, batch })
    }

    fn inputs<'a>(&'a self, batch: &'a EpochBatch) -> ObjectiveInputs<'a> {
        ObjectiveInputs {
            features: &self.features,
            corrupted: batch.corrupted.as_ref(),
            context: &self.context,
            treatment: &self.treatment,
            observed: &self.observed,
            factual_units: &self.splits.train,
            batch: batch.batch.as_ref(),
        }
    }

    fn apply_grads(
        &mut self,
        tape: &Tape,
        ids: &[crate::numerics::TensorId],
        include: impl Fn(&crate::model::ParamInfo) -> bool,
    ) -> Result<()> {
        let infos = self.model.param_infos();
        let mut params = self.model.param_values_mut();
        for (index, ((info, param), &id)) in
            infos.iter().zip(params.iter_mut()).zip(ids).enumerate()
        {
            if !include(info) {
                continue;
            }
            let decay = info.kind == ParamKind::Weight;
            self.adam.step(index, param, tape.grad(id), decay)?;
        }
        Ok(())
    }

    /// Maximizer update, one sub-step per max player: the discriminator
    /// descends its own cross-entropy beta*L_adv, and the MI probe ascends
    /// alpha*L_mi. A no-op when both weights are zero.
    ///
    /// The discriminator's loss is not propagated into the encoder here;
    /// the encoder meets that term only in the minimizer step, where fooling
    /// the discriminator is what balances the representation distributions.
    /// The encoder's share of the MI ascent also lives in the minimizer
    /// step, so every ablation variant gives the encoder exactly one update
    /// per epoch and variant comparisons measure the loss terms rather than
    /// update counts.
    pub fn maximizer_step(&mut self, batch: &EpochBatch) -> Result<LossValues> {
        let alpha = self.model.alpha;
        let beta = self.model.beta;
        let mut values = LossValues::default();

        if self.config.strict_minimax {
            // Literal joint reading: the encoder belongs to the maximizer
            // and ascends alpha*L_mi - beta*L_adv together with the probe
            // and the discriminator.
            if alpha == 0.0 && beta == 0.0 {
                return Ok(values);
            }
            let mut tape = Tape::new();
            let (bound, ids) = self.model.bind_with_ids(&mut tape, true);
            let fwd = bound.joint_forward(&mut tape, &self.inputs(batch))?;
            let stats = fwd.values(&tape);
            self.check_finite(&stats)?;
            values = stats;
            let mut loss = None;
            if let Some(adv) = fwd.adversarial {
                loss = Some(tape.scale(adv, beta));
            }
            if let Some(mi) = fwd.mi {
                let neg = tape.scale(mi, -alpha);
                loss = Some(match loss {
                    Some(acc) => tape.add(acc, neg)?,
                    None => neg,
                });
            }
            let loss = loss.expect("at least one maximizer term is active");
            tape.backward(loss)?;
            self.saturation_events += tape.saturation_events();
            self.apply_grads(&tape, &ids, |info| {
                matches!(
                    info.group,
                    ParamGroup::Discriminator | ParamGroup::MiProbe | ParamGroup::Encoder
                )
            })?;
            return Ok(values);
        }

        if beta != 0.0 {
            if let Some(stats) = self.discriminator_substep(batch)? {
                values.factual = stats.factual;
                values.adversarial = stats.adversarial;
            }
        }

        if alpha != 0.0 {
            let mut tape = Tape::new();
            let (bound, ids) = self.model.bind_with_ids(&mut tape, true);
            let inputs = ObjectiveInputs {
                batch: None,
                ..self.inputs(batch)
            };
            let fwd = bound.joint_forward(&mut tape, &inputs)?;
            let stats = fwd.values(&tape);
            self.check_finite(&stats)?;
            values.factual = stats.factual;
            values.mi = stats.mi;
            let mi = fwd.mi.expect("alpha != 0 implies a corruption");
            let loss = tape.scale(mi, -alpha);
            tape.backward(loss)?;
            self.saturation_events += tape.saturation_events();
            self.apply_grads(&tape, &ids, |info| info.group == ParamGroup::MiProbe)?;
        }
        Ok(values)
    }

    /// One discriminator-only update; None when beta is zero.
    fn discriminator_substep(&mut self, batch: &EpochBatch) -> Result<Option<LossValues>> {
        let beta = self.model.beta;
        if beta == 0.0 {
            return Ok(None);
        }
        let mut tape = Tape::new();
        let (bound, ids) = self.model.bind_with_ids(&mut tape, true);
        let inputs = ObjectiveInputs {
            corrupted: None,
            ..self.inputs(batch)
        };
        let fwd = bound.joint_forward(&mut tape, &inputs)?;
        let stats = fwd.values(&tape);
        self.check_finite(&stats)?;
        let adv = fwd.adversarial.expect("beta != 0 implies a batch");
        let loss = tape.scale(adv, beta);
        tape.backward(loss)?;
        self.saturation_events += tape.saturation_events();
        self.apply_grads(&tape, &ids, |info| info.group == ParamGroup::Discriminator)?;
        Ok(Some(stats))
    }

    /// Minimizer update: the generator (and, unless strict, the encoder)
    /// descends L_factual - alpha*L_mi - beta*L_adv. The MI term has no
    /// generator gradient; it is the encoder's share of the MI ascent.
    pub fn minimizer_step(&mut self, batch: &EpochBatch) -> Result<LossValues> {
        let alpha = self.model.alpha;
        let beta = self.model.beta;
        let strict = self.config.strict_minimax;
        let mut tape = Tape::new();
        let (bound, ids) = self.model.bind_with_ids(&mut tape, true);
        // Under the strict minimax reading the encoder sits out, and with it
        // the only parameter the MI term could reach here.
        let inputs = ObjectiveInputs {
            corrupted: if strict {
                None
            } else {
                batch.corrupted.as_ref()
            },
            ..self.inputs(batch)
        };
        let fwd = bound.joint_forward(&mut tape, &inputs)?;
        let values = fwd.values(&tape);
        self.check_finite(&values)?;

        let mut loss = fwd.factual;
        if let Some(mi) = fwd.mi {
            let scaled = tape.scale(mi, alpha);
            loss = tape.sub(loss, scaled)?;
        }
        if let Some(adv) = fwd.adversarial {
            let scaled = tape.scale(adv, beta);
            loss = tape.sub(loss, scaled)?;
        }
        tape.backward(loss)?;
        self.saturation_events += tape.saturation_events();

        self.apply_grads(&tape, &ids, |info| match info.group {
            ParamGroup::Generator => true,
            ParamGroup::Encoder => !strict,
            _ => false,
        })?;
        Ok(values)
    }

    fn check_finite(&self, values: &LossValues) -> Result<()> {
        let mut offenders = Vec::new();
        if !values.factual.is_finite() {
            offenders.push("factual loss");
        }
        if values.mi.map(|v| !v.is_finite()).unwrap_or(false) {
            offenders.push("mutual-information loss");
        }
        if values.adversarial.map(|v| !v.is_finite()).unwrap_or(false) {
            offenders.push("adversarial loss");
        }
        if offenders.is_empty() {
            Ok(())
        } else {
            Err(Error::Numerical(format!(
                "{} became non-finite",
                offenders.join(", ")
            )))
        }
    }

    /// Frozen-parameter evaluation pass: loss values on the training split
    /// plus the validation criterion.
    pub fn evaluate(&mut self, batch: &EpochBatch) -> Result<EpochStats> {
        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape, false);
        let fwd = bound.joint_forward(&mut tape, &self.inputs(batch))?;
        let losses = fwd.values(&tape);
        self.saturation_events += tape.saturation_events();

        let factual_pred = tape.values(fwd.outcomes.factual);
        let validation = match self.config.validation {
            ValidationCriterion::FactualMse => {
                mse_over(&self.splits.val, factual_pred, &self.observed)
            }
            ValidationCriterion::OraclePehe => {
                let true_ite = self.true_ite.as_ref().ok_or_else(|| {
                    Error::contract("oracle validation requires ground-truth effects")
                })?;
                let treated = tape.values(fwd.outcomes.treated);
                let control = tape.values(fwd.outcomes.control);
                let est: Vec<f64> = self
                    .splits
                    .val
                    .iter()
                    .map(|&i| treated[i] - control[i])
                    .collect();
                let truth: Vec<f64> = self.splits.val.iter().map(|&i| true_ite[i]).collect();
                sqrt_pehe(&truth, &est)?
            }
        };
        if !validation.is_finite() {
            return Err(Error::Numerical(
                "validation criterion became non-finite".into(),
            ));
        }
        self.check_finite(&losses)?;
        Ok(EpochStats { losses, validation })
    }

    /// One full epoch: maximizer step(s), minimizer step, evaluation. Both
    /// discriminators (the outcome discriminator and the MI probe) take
    /// `discriminator_steps` updates per generator update.
    pub fn epoch(&mut self) -> Result<EpochStats> {
        let batch = self.draw_batch()?;
        for _ in 0..self.config.discriminator_steps {
            self.maximizer_step(&batch)?;
        }
        self.minimizer_step(&batch)?;
        self.evaluate(&batch)
    }

    pub fn into_model(self) -> GialModel {
        self.model
    }
}

fn mse_over(indices: &[usize], predicted: &[f64], observed: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &i in indices {
        let d = predicted[i] - observed[i];
        acc += d * d;
    }
    acc / indices.len() as f64
}

/// A trained model with its trace and the split it was trained under.
pub struct TrainOutput {
    pub model: GialModel,
    pub trace: TrainTrace,
    pub splits: SplitIndices,
}

/// Trains on a 60/20/20 split derived from the config seed, with early
/// stopping on the validation criterion and best-epoch weights restored.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutput> {
    let splits = split(dataset.n(), (0.6, 0.2, 0.2), config.seed)?;
    train_with_splits(dataset, splits, config)
}

pub fn train_with_splits(
    dataset: &Dataset,
    splits: SplitIndices,
    config: &TrainConfig,
) -> Result<TrainOutput> {
    let mut trainer = Trainer::new(dataset, splits, config)?;
    let mut trace = TrainTrace::default();
    let mut best_value = f64::INFINITY;
    let mut best_snapshot = trainer.model.snapshot();

    for epoch in 0..config.max_epochs {
        let stats = trainer.epoch().map_err(|e| match e {
            Error::Numerical(msg) => Error::Numerical(format!("epoch {epoch}: {msg}")),
            other => other,
        })?;
        trace.factual.push(stats.losses.factual);
        trace.mi.push(stats.losses.mi);
        trace.adversarial.push(stats.losses.adversarial);
        trace.validation.push(stats.validation);
        if stats.validation < best_value {
            best_value = stats.validation;
            trace.best_epoch = epoch;
            best_snapshot = trainer.model.snapshot();
        }
        if epoch - trace.best_epoch >= config.patience {
            break;
        }
    }
    trainer.model.restore(&best_snapshot)?;
    trace.saturation_events = trainer.saturation_events;
    let splits = trainer.splits.clone();
    Ok(TrainOutput {
        model: trainer.into_model(),
        trace,
        splits,
    })
}

/// Frozen-model evaluation over a dataset: per-split factual MSE and, when
/// ground truth is present, test-split effect errors.
pub struct Evaluation {
    pub factual_mse: SplitMse,
    pub sqrt_pehe: f64,
    pub eps_ate: f64,
    pub potential_outcomes: PotentialOutcomes,
}

pub fn evaluate_model(
    model: &GialModel,
    dataset: &Dataset,
    splits: &SplitIndices,
) -> Result<Evaluation> {
    let context = GraphContext::new(&dataset.graph, model.encoder.kind());
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let inputs = ObjectiveInputs {
        features: &dataset.features,
        corrupted: None,
        context: &context,
        treatment: &dataset.treatment,
        observed: &dataset.outcomes,
        factual_units: &splits.train,
        batch: None,
    };
    let fwd = bound.joint_forward(&mut tape, &inputs)?;
    let predicted = tape.values(fwd.outcomes.factual);
    let factual_mse = SplitMse {
        train: mse_over(&splits.train, predicted, &dataset.outcomes),
        validation: mse_over(&splits.val, predicted, &dataset.outcomes),
        test: mse_over(&splits.test, predicted, &dataset.outcomes),
    };
    let potential_outcomes = PotentialOutcomes::from_tape(&tape, &fwd.outcomes);
    let true_ite = dataset
        .true_ite()
        .ok_or_else(|| Error::contract("effect evaluation requires ground-truth outcomes"))?;
    let est_ite = potential_outcomes.ite();
    let test_true: Vec<f64> = splits.test.iter().map(|&i| true_ite[i]).collect();
    let test_est: Vec<f64> = splits.test.iter().map(|&i| est_ite[i]).collect();
    Ok(Evaluation {
        factual_mse,
        sqrt_pehe: sqrt_pehe(&test_true, &test_est)?,
        eps_ate: eps_ate(&test_true, &test_est)?,
        potential_outcomes,
    })
}

/// Ablation switches: removing the structure-MI module zeroes alpha,
/// removing the counterfactual discriminator zeroes beta.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationVariant {
    Full,
    NoSmi,
    NoCd,
}

impl AblationVariant {
    pub fn name(&self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoSmi => "no_smi",
            AblationVariant::NoCd => "no_cd",
        }
    }

    pub fn apply(&self, config: &TrainConfig) -> TrainConfig {
        let mut cfg = config.clone();
        match self {
            AblationVariant::Full => {}
            AblationVariant::NoSmi => cfg.alpha = 0.0,
            AblationVariant::NoCd => cfg.beta = 0.0,
        }
        cfg
    }
}

/// Trains one ablation variant and reports test metrics. All variants of a
/// config share the seed, hence the split and the parameter initialization.
pub fn ablate(
    dataset: &Dataset,
    config: &TrainConfig,
    variant: AblationVariant,
) -> Result<(MetricsReport, TrainTrace)> {
    let started = std::time::Instant::now();
    let cfg = variant.apply(config);
    let output = train(dataset, &cfg)?;
    let eval = evaluate_model(&output.model, dataset, &output.splits)?;
    let census = dataset.graph.edge_census(&dataset.treatment)?;
    let report = MetricsReport {
        variant: variant.name().to_string(),
        sqrt_pehe: eval.sqrt_pehe,
        eps_ate: eval.eps_ate,
        factual_mse: eval.factual_mse,
        edge_census: census,
        config_fingerprint: cfg.fingerprint(),
        seed: cfg.seed,
        best_epoch: output.trace.best_epoch,
        epochs_run: output.trace.epochs_run(),
        saturation_events: output.trace.saturation_events,
        runtime_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((report, output.trace))
}

/// One grid point of the sensitivity sweep.
pub struct SweepPoint {
    pub alpha: f64,
    pub beta: f64,
    pub report: MetricsReport,
}

/// Trains one model per (alpha, beta) grid point; everything else is fixed.
pub fn sensitivity_sweep(
    dataset: &Dataset,
    config: &TrainConfig,
    alphas: &[f64],
    betas: &[f64],
) -> Result<Vec<SweepPoint>> {
    let mut points = Vec::with_capacity(alphas.len() * betas.len());
    for &alpha in alphas {
        for &beta in betas {
            let cfg = TrainConfig {
                alpha,
                beta,
                ..config.clone()
            };
            let (report, _) = ablate(dataset, &cfg, AblationVariant::Full)?;
            points.push(SweepPoint {
                alpha,
                beta,
                report,
            });
        }
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, GenConfig};

    fn quick_dataset(seed: u64) -> Dataset {
        generate(&GenConfig {
            nodes: 60,
            feature_dim: 10,
            topic_dim: 4,
            edge_density: 0.08,
            homophily: 1.0,
            bias: 1.0,
            seed,
            ..GenConfig::default()
        })
        .unwrap()
    }

    fn quick_config() -> TrainConfig {
        TrainConfig {
            rep_dim: 6,
            encoder_layers: 1,
            generator_layers: 1,
            discriminator_layers: 1,
            max_epochs: 8,
            patience: 8,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn factual_regression_descends_without_adversaries() {
        // alpha = beta = 0: plain factual regression on the training split.
        for seed in 0..5 {
            let data = generate(&GenConfig {
                nodes: 100,
                feature_dim: 12,
                topic_dim: 4,
                edge_density: 0.06,
                seed: 1000 + seed,
                ..GenConfig::default()
            })
            .unwrap();
            let cfg = TrainConfig {
                alpha: 0.0,
                beta: 0.0,
                max_epochs: 60,
                patience: 60,
                seed,
                ..quick_config()
            };
            let out = train(&data, &cfg).unwrap();
            let first = out.trace.factual[0];
            let last = *out.trace.factual.last().unwrap();
            assert!(
                last < first,
                "seed {seed}: factual loss did not descend ({first} -> {last})"
            );
        }
    }

    #[test]
    fn maximizer_step_never_touches_generator_and_vice_versa() {
        let data = quick_dataset(3);
        let cfg = quick_config();
        let splits = split(data.n(), (0.6, 0.2, 0.2), cfg.seed).unwrap();
        let mut trainer = Trainer::new(&data, splits, &cfg).unwrap();
        let infos = trainer.model.param_infos();

        let batch = trainer.draw_batch().unwrap();
        let before = trainer.model.snapshot();
        trainer.maximizer_step(&batch).unwrap();
        let after_max = trainer.model.snapshot();
        for (i, info) in infos.iter().enumerate() {
            match info.group {
                ParamGroup::Generator => assert_eq!(
                    before[i], after_max[i],
                    "maximizer step moved generator parameter {i}"
                ),
                ParamGroup::Discriminator | ParamGroup::MiProbe | ParamGroup::Encoder => {}
            }
        }
        assert_ne!(before, after_max);

        trainer.minimizer_step(&batch).unwrap();
        let after_min = trainer.model.snapshot();
        for (i, info) in infos.iter().enumerate() {
            if matches!(info.group, ParamGroup::Discriminator | ParamGroup::MiProbe) {
                assert_eq!(
                    after_max[i], after_min[i],
                    "minimizer step moved adversary parameter {i}"
                );
            }
        }
    }

    #[test]
    fn zero_beta_leaves_discriminator_at_initialization() {
        let data = quick_dataset(4);
        let cfg = TrainConfig {
            beta: 0.0,
            max_epochs: 6,
            patience: 6,
            ..quick_config()
        };
        let splits = split(data.n(), (0.6, 0.2, 0.2), cfg.seed).unwrap();
        let mut trainer = Trainer::new(&data, splits, &cfg).unwrap();
        let infos = trainer.model.param_infos();
        let before = trainer.model.snapshot();
        for _ in 0..6 {
            trainer.epoch().unwrap();
        }
        let after = trainer.model.snapshot();
        for (i, info) in infos.iter().enumerate() {
            if info.group == ParamGroup::Discriminator {
                assert_eq!(before[i], after[i], "discriminator parameter {i} drifted");
            }
        }
    }

    #[test]
    fn strict_minimax_freezes_encoder_in_minimizer_step() {
        let data = quick_dataset(5);
        let cfg = TrainConfig {
            strict_minimax: true,
            ..quick_config()
        };
        let splits = split(data.n(), (0.6, 0.2, 0.2), cfg.seed).unwrap();
        let mut trainer = Trainer::new(&data, splits, &cfg).unwrap();
        let infos = trainer.model.param_infos();
        let batch = trainer.draw_batch().unwrap();
        let before = trainer.model.snapshot();
        trainer.minimizer_step(&batch).unwrap();
        let after = trainer.model.snapshot();
        for (i, info) in infos.iter().enumerate() {
            if info.group == ParamGroup::Encoder {
                assert_eq!(
                    before[i], after[i],
                    "strict mode moved encoder parameter {i}"
                );
            }
        }
    }

    #[test]
    fn zero_weights_and_zero_learning_rate_change_nothing() {
        let data = quick_dataset(6);
        let cfg = TrainConfig {
            alpha: 0.0,
            beta: 0.0,
            learning_rate: 0.0,
            l2: 0.0,
            max_epochs: 5,
            patience: 5,
            ..quick_config()
        };
        let splits = split(data.n(), (0.6, 0.2, 0.2), cfg.seed).unwrap();
        let mut trainer = Trainer::new(&data, splits, &cfg).unwrap();
        let before = trainer.model.snapshot();
        for _ in 0..5 {
            trainer.epoch().unwrap();
        }
        assert_eq!(trainer.model.snapshot(), before);
    }

    #[test]
    fn training_is_bit_deterministic_per_seed() {
        let data = quick_dataset(7);
        let cfg = quick_config();
        let a = train(&data, &cfg).unwrap();
        let b = train(&data, &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.model.snapshot(), b.model.snapshot());
        assert_eq!(a.splits, b.splits);
    }

    #[test]
    fn early_stopping_restores_the_best_epoch_snapshot() {
        let data = quick_dataset(8);
        let cfg = TrainConfig {
            max_epochs: 30,
            patience: 5,
            ..quick_config()
        };
        let out = train(&data, &cfg).unwrap();
        let best = out.trace.best_epoch;
        let best_val = out.trace.validation[best];
        for (epoch, &v) in out.trace.validation.iter().enumerate() {
            assert!(
                v >= best_val || epoch == best,
                "epoch {epoch} beat the recorded best"
            );
        }
        // The restored model reproduces the recorded best criterion exactly.
        let mut trainer = Trainer::new(&data, out.splits.clone(), &cfg).unwrap();
        trainer.model.restore(&out.model.snapshot()).unwrap();
        let eval = trainer
            .evaluate(&EpochBatch {
                corrupted: None,
                batch: None,
            })
            .unwrap();
        assert_eq!(eval.validation, best_val);
        // Stopped within patience of the best epoch.
        assert!(out.trace.epochs_run() <= best + cfg.patience + 1);
    }

    #[test]
    fn ablation_variants_toggle_the_right_terms() {
        let data = quick_dataset(9);
        let cfg = quick_config();
        assert_eq!(AblationVariant::NoSmi.apply(&cfg).alpha, 0.0);
        assert_eq!(AblationVariant::NoSmi.apply(&cfg).beta, cfg.beta);
        assert_eq!(AblationVariant::NoCd.apply(&cfg).beta, 0.0);
        assert_eq!(AblationVariant::Full.apply(&cfg), cfg);

        let (report, trace) = ablate(&data, &cfg, AblationVariant::NoSmi).unwrap();
        assert_eq!(report.variant, "no_smi");
        assert!(trace.mi.iter().all(|v| v.is_none()));
        assert!(report.sqrt_pehe >= 0.0 && report.eps_ate >= 0.0);
        assert!(report.eps_ate <= report.sqrt_pehe + 1e-12);
    }

    #[test]
    fn sweep_produces_one_report_per_grid_point() {
        let data = quick_dataset(10);
        let cfg = TrainConfig {
            max_epochs: 3,
            patience: 3,
            ..quick_config()
        };
        let points = sensitivity_sweep(&data, &cfg, &[0.0, 0.01], &[0.0, 0.01]).unwrap();
        assert_eq!(points.len(), 4);
        let reports: Vec<_> = points.iter().map(|p| (p.alpha, p.beta)).collect();
        assert_eq!(
            reports,
            vec![(0.0, 0.0), (0.0, 0.01), (0.01, 0.0), (0.01, 0.01)]
        );
    }

    #[test]
    fn paper_faithful_mode_rejects_off_grid_values() {
        let mut cfg = TrainConfig {
            paper_faithful: true,
            rep_dim: 50,
            alpha: 1e-3,
            beta: 1e-2,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_ok());
        cfg.alpha = 0.02;
        assert!(cfg.validate().is_err());
        cfg.alpha = 1e-3;
        cfg.rep_dim = 60;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json_round_trips_with_defaults() {
        let cfg: TrainConfig = serde_json::from_str("{\"alpha\": 0.1, \"seed\": 3}").unwrap();
        assert_eq!(cfg.alpha, 0.1);
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.rep_dim, TrainConfig::default().rep_dim);
        let json = serde_json::to_string(&cfg).unwrap();
        let back: TrainConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.fingerprint(), cfg.fingerprint());
    }

    #[test]
    fn trace_csv_has_one_row_per_epoch() {
        let data = quick_dataset(11);
        let cfg = TrainConfig {
            max_epochs: 4,
            patience: 4,
            ..quick_config()
        };
        let out = train(&data, &cfg).unwrap();
        let csv = out.trace.to_csv();
        assert_eq!(csv.lines().count(), 1 + out.trace.epochs_run());
        assert!(csv.starts_with("epoch,factual_loss,mi_loss,adversarial_loss,validation"));
    }
}
