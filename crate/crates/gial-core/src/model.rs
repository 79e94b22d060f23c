//! The assembled model: encoder, structure-MI probe, outcome generator and
//! counterfactual discriminator, with the trade-off weights alpha and beta.
//!
//! Parameters are visited in one canonical order everywhere (listing,
//! mutation, tape binding, snapshots), which is what lets the alternating
//! optimizer address the two players' parameter subsets by index.

use rand::Rng;

use crate::encoders::{
    summary_readout, BoundEncoder, BoundGraphContext, Encoder, EncoderConfig, GraphContext,
};
use crate::error::{Error, Result};
use crate::infomax::{mi_loss, BoundMiDiscriminator, MiDiscriminator};
use crate::numerics::{Matrix, Tape, TensorId};
use crate::outcome::{
    adversarial_loss, discriminator_probs, factual_loss, BalancedBatch, BoundCfDiscriminator,
    BoundOutcomeGenerator, CfConfig, CfDiscriminator, OutcomeConfig, OutcomeGenerator,
    PotentialOutcomeIds,
};

/// Which component a parameter belongs to; the training loop partitions the
/// minimax players along these groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder,
    MiProbe,
    Generator,
    Discriminator,
}

/// Coarse role of a parameter. Weight decay applies to weights only.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Slope,
}

#[derive(Clone, Debug)]
pub struct ParamInfo {
    pub group: ParamGroup,
    pub kind: ParamKind,
}

#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub generator: OutcomeConfig,
    pub discriminator: CfConfig,
    pub alpha: f64,
    pub beta: f64,
}

/// Encoder stack + summary readout + MI probe + outcome generator +
/// counterfactual discriminator.
#[derive(Clone, Debug)]
pub struct GialModel {
    pub encoder: Encoder,
    pub mi: MiDiscriminator,
    pub generator: OutcomeGenerator,
    pub discriminator: CfDiscriminator,
    pub alpha: f64,
    pub beta: f64,
}

impl GialModel {
    pub fn init(config: &ModelConfig, input_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let rep_dim = config.encoder.hidden_dim;
        if config.generator.hidden_dim != rep_dim || config.discriminator.hidden_dim != rep_dim {
            return Err(Error::contract(
                "generator and discriminator widths must match the representation width",
            ));
        }
        Ok(GialModel {
            encoder: Encoder::init(&config.encoder, input_dim, rng)?,
            mi: MiDiscriminator::init(rep_dim, rng),
            generator: OutcomeGenerator::init(&config.generator, rep_dim, rng)?,
            discriminator: CfDiscriminator::init(&config.discriminator, rep_dim, rng)?,
            alpha: config.alpha,
            beta: config.beta,
        })
    }

    /// Group and kind of every parameter, in canonical order.
    pub fn param_infos(&self) -> Vec<ParamInfo> {
        let mut infos = Vec::new();
        let mut kinds = Vec::new();
        self.encoder.param_kinds(&mut kinds);
        infos.extend(kinds.drain(..).map(|kind| ParamInfo {
            group: ParamGroup::Encoder,
            kind,
        }));
        infos.push(ParamInfo {
            group: ParamGroup::MiProbe,
            kind: ParamKind::Weight,
        });
        self.generator.param_kinds(&mut kinds);
        infos.extend(kinds.drain(..).map(|kind| ParamInfo {
            group: ParamGroup::Generator,
            kind,
        }));
        self.discriminator.param_kinds(&mut kinds);
        infos.extend(kinds.drain(..).map(|kind| ParamInfo {
            group: ParamGroup::Discriminator,
            kind,
        }));
        infos
    }

    pub fn param_values(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        self.encoder.collect_params(&mut out);
        out.push(&self.mi.weight);
        self.generator.collect_params(&mut out);
        self.discriminator.collect_params(&mut out);
        out
    }

    pub fn param_values_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        self.encoder.collect_params_mut(&mut out);
        out.push(&mut self.mi.weight);
        self.generator.collect_params_mut(&mut out);
        self.discriminator.collect_params_mut(&mut out);
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_values().len()
    }

    /// Copies of every parameter, in canonical order.
    pub fn snapshot(&self) -> Vec<Matrix> {
        self.param_values().into_iter().cloned().collect()
    }

    /// Restores a snapshot taken from a structurally identical model.
    pub fn restore(&mut self, snapshot: &[Matrix]) -> Result<()> {
        let mut params = self.param_values_mut();
        if params.len() != snapshot.len() {
            return Err(Error::contract(format!(
                "snapshot of {} parameters for a model with {}",
                snapshot.len(),
                params.len()
            )));
        }
        for (param, saved) in params.iter_mut().zip(snapshot) {
            if param.shape() != saved.shape() {
                return Err(Error::contract("snapshot parameter shape mismatch"));
            }
            **param = saved.clone();
        }
        Ok(())
    }

    /// Binds every parameter onto the tape, trainable or frozen, in
    /// canonical order.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundModel {
        self.bind_with_ids(tape, trainable).0
    }

    /// As [`GialModel::bind`], also returning the inserted ids in canonical
    /// order so gradients can be read back per parameter.
    pub fn bind_with_ids(&self, tape: &mut Tape, trainable: bool) -> (BoundModel, Vec<TensorId>) {
        let ids: Vec<TensorId> = self
            .param_values()
            .into_iter()
            .map(|m| {
                if trainable {
                    tape.param(m)
                } else {
                    tape.constant(m)
                }
            })
            .collect();
        let bound = self
            .bound_from_ids(&ids)
            .expect("canonical ids always rebind");
        (bound, ids)
    }

    /// Rebuilds the tape-side view from pre-inserted ids in canonical order;
    /// this is what the gradient-check harness uses to perturb parameters.
    pub fn bound_from_ids(&self, ids: &[TensorId]) -> Result<BoundModel> {
        if ids.len() != self.param_count() {
            return Err(Error::contract(format!(
                "{} ids for a model with {} parameters",
                ids.len(),
                self.param_count()
            )));
        }
        let mut it = ids.iter().copied();
        let encoder = self.encoder.bound_from(&mut it);
        let mi = BoundMiDiscriminator {
            weight: it.next().expect("mi weight id"),
        };
        let generator = self.generator.bound_from(&mut it);
        let discriminator = self.discriminator.bound_from(&mut it);
        debug_assert!(it.next().is_none());
        Ok(BoundModel {
            encoder,
            mi,
            generator,
            discriminator,
            alpha: self.alpha,
            beta: self.beta,
        })
    }
}

/// Everything a forward pass reads besides the parameters. Optional pieces
/// switch their loss terms off: no corrupted features means no MI term, no
/// balanced batch means no adversarial term.
pub struct ObjectiveInputs<'a> {
    pub features: &'a Matrix,
    pub corrupted: Option<&'a Matrix>,
    pub context: &'a GraphContext,
    pub treatment: &'a [u8],
    pub observed: &'a [f64],
    /// Units whose factual prediction error is supervised.
    pub factual_units: &'a [usize],
    pub batch: Option<&'a BalancedBatch>,
}

/// Ids of the loss terms and intermediate outputs of one joint forward pass.
pub struct JointForward {
    pub representation: TensorId,
    pub outcomes: PotentialOutcomeIds,
    pub factual: TensorId,
    pub mi: Option<TensorId>,
    pub adversarial: Option<TensorId>,
}

/// Scalar loss values read back from a [`JointForward`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub factual: f64,
    pub mi: Option<f64>,
    pub adversarial: Option<f64>,
}

impl JointForward {
    pub fn values(&self, tape: &Tape) -> LossValues {
        LossValues {
            factual: tape.scalar(self.factual),
            mi: self.mi.map(|id| tape.scalar(id)),
            adversarial: self.adversarial.map(|id| tape.scalar(id)),
        }
    }
}

pub struct BoundModel {
    pub encoder: BoundEncoder,
    pub mi: BoundMiDiscriminator,
    pub generator: BoundOutcomeGenerator,
    pub discriminator: BoundCfDiscriminator,
    pub alpha: f64,
    pub beta: f64,
}

impl BoundModel {
    /// Runs the full pipeline: encode, summarize, score corrupted features,
    /// generate outcomes, discriminate candidates. Negative samples share
    /// the encoder parameters and the adjacency with the positive pass.
    pub fn joint_forward(
        &self,
        tape: &mut Tape,
        inputs: &ObjectiveInputs<'_>,
    ) -> Result<JointForward> {
        let n = inputs.features.rows();
        if inputs.observed.len() != n || inputs.treatment.len() != n {
            return Err(Error::contract(
                "features, treatment and outcomes must agree on the unit count",
            ));
        }
        let mut ctx: BoundGraphContext = inputs.context.bind(tape);
        let features = tape.constant(inputs.features);
        let representation = self.encoder.forward(tape, features, &mut ctx)?;

        let mi = match inputs.corrupted {
            Some(corrupted) => {
                let negative_features = tape.constant(corrupted);
                let negative = self.encoder.forward(tape, negative_features, &mut ctx)?;
                let summary = summary_readout(tape, representation)?;
                Some(mi_loss(tape, representation, negative, summary, &self.mi)?)
            }
            None => None,
        };

        let outcomes = self
            .generator
            .forward(tape, representation, inputs.treatment)?;
        let observed = tape.constant(&Matrix::column(inputs.observed));

        let factual = {
            let idx: std::rc::Rc<[usize]> = inputs.factual_units.to_vec().into();
            let predicted = tape.gather_rows(outcomes.factual, std::rc::Rc::clone(&idx))?;
            let target = tape.gather_rows(observed, idx)?;
            factual_loss(tape, predicted, target)?
        };

        let adversarial = match inputs.batch {
            Some(batch) => {
                let probs = discriminator_probs(
                    tape,
                    representation,
                    observed,
                    &outcomes,
                    batch,
                    &self.discriminator,
                )?;
                Some(adversarial_loss(tape, &probs, true)?)
            }
            None => None,
        };

        Ok(JointForward {
            representation,
            outcomes,
            factual,
            mi,
            adversarial,
        })
    }

    /// The joint minimax objective L_factual + alpha * L_mi - beta * L_adv,
    /// as a single scalar on the tape.
    pub fn objective(&self, tape: &mut Tape, inputs: &ObjectiveInputs<'_>) -> Result<TensorId> {
        let fwd = self.joint_forward(tape, inputs)?;
        let mut total = fwd.factual;
        if let Some(mi) = fwd.mi {
            let scaled = tape.scale(mi, self.alpha);
            total = tape.add(total, scaled)?;
        }
        if let Some(adv) = fwd.adversarial {
            let scaled = tape.scale(adv, self.beta);
            total = tape.sub(total, scaled)?;
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::EncoderKind;
    use crate::graph::Graph;
    use crate::infomax::corrupt;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn small_config(kind: EncoderKind, alpha: f64, beta: f64) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                kind,
                layers: 2,
                hidden_dim: 4,
                attention_heads: 2,
            },
            generator: OutcomeConfig {
                head_layers: 2,
                shared_layers: 0,
                hidden_dim: 4,
            },
            discriminator: CfConfig {
                layers: 2,
                hidden_dim: 4,
            },
            alpha,
            beta,
        }
    }

    fn fixture(n: usize, seed: u64) -> (Graph, Matrix, Vec<u8>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.gen_bool(0.35) {
                    edges.push((u, v));
                }
            }
        }
        let graph = Graph::new(n, edges).unwrap();
        let features = Matrix::uniform(n, 5, -1.0, 1.0, &mut rng);
        let mut treatment: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        // Shuffle assignments so groups are not index-contiguous.
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            treatment.swap(i, j);
        }
        let observed: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        (graph, features, treatment, observed)
    }

    #[test]
    fn param_infos_align_with_values() {
        for kind in [EncoderKind::Gcn, EncoderKind::Gat] {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let model = GialModel::init(&small_config(kind, 0.1, 0.1), 5, &mut rng).unwrap();
            let infos = model.param_infos();
            let values = model.param_values();
            assert_eq!(infos.len(), values.len());
            for (info, value) in infos.iter().zip(&values) {
                if info.kind == ParamKind::Slope {
                    assert_eq!(value.shape(), (1, 1), "slope must be scalar");
                }
                if info.kind == ParamKind::Bias {
                    assert_eq!(value.rows(), 1, "bias must be a row");
                }
            }
            // Binding then rebinding from ids covers every parameter exactly.
            let mut tape = Tape::new();
            let bound_ids: Vec<TensorId> = values.iter().map(|m| tape.constant(m)).collect();
            assert!(model.bound_from_ids(&bound_ids).is_ok());
            assert!(model.bound_from_ids(&bound_ids[1..]).is_err());
        }
    }

    #[test]
    fn snapshot_restore_round_trips_bytes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut model =
            GialModel::init(&small_config(EncoderKind::Gcn, 0.1, 0.1), 5, &mut rng).unwrap();
        let saved = model.snapshot();
        for p in model.param_values_mut() {
            for v in p.data_mut() {
                *v += 1.0;
            }
        }
        assert_ne!(model.snapshot(), saved);
        model.restore(&saved).unwrap();
        assert_eq!(model.snapshot(), saved);
    }

    #[test]
    fn joint_objective_gradients_match_finite_differences() {
        use crate::numerics::grad_check;
        let n = 8;
        let (graph, features, treatment, observed) = fixture(n, 33);
        let factual_units: Vec<usize> = (0..n).collect();
        let mut batch_rng = ChaCha8Rng::seed_from_u64(9);
        let batch = BalancedBatch::draw(&treatment, &factual_units, &mut batch_rng).unwrap();

        for kind in [EncoderKind::Gcn, EncoderKind::Gat] {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let model = GialModel::init(&small_config(kind, 0.05, 0.05), 5, &mut rng).unwrap();
            let context = GraphContext::new(&graph, kind);
            let mut corrupt_rng = ChaCha8Rng::seed_from_u64(13);
            let corrupted = corrupt(&features, &mut corrupt_rng);
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
            assert!(
                report.max_rel_error < 1e-4,
                "{kind:?}: joint gradient error {} at param {} coord {}",
                report.max_rel_error,
                report.worst_param,
                report.worst_coord
            );
        }
    }

    #[test]
    fn optional_terms_toggle_with_inputs() {
        let n = 6;
        let (graph, features, treatment, observed) = fixture(n, 8);
        let factual_units: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model =
            GialModel::init(&small_config(EncoderKind::Gcn, 0.1, 0.1), 5, &mut rng).unwrap();
        let context = GraphContext::new(&graph, EncoderKind::Gcn);

        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false);
        let fwd = bound
            .joint_forward(
                &mut tape,
                &ObjectiveInputs {
                    features: &features,
                    corrupted: None,
                    context: &context,
                    treatment: &treatment,
                    observed: &observed,
                    factual_units: &factual_units,
                    batch: None,
                },
            )
            .unwrap();
        assert!(fwd.mi.is_none());
        assert!(fwd.adversarial.is_none());
        let values = fwd.values(&tape);
        assert!(values.factual.is_finite());
    }
}
