//! Potential outcome generation and the counterfactual outcome
//! discriminator.
//!
//! The generator is a two-head feed-forward network: one head per treatment
//! arm, both reading the shared confounder representation. The discriminator
//! mirrors that split and judges, per (unit, arm), whether a candidate
//! outcome is the observed factual one; the candidate scalar is re-injected
//! into every layer of the head so it cannot be drowned out by the
//! representation width.

use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::infomax::LOG_CLAMP;
use crate::numerics::{Matrix, Tape, TensorId};

const INITIAL_PRELU_SLOPE: f64 = crate::encoders::INITIAL_PRELU_SLOPE;

fn init_weight(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let bound = 1.0 / (rows as f64).sqrt();
    Matrix::uniform(rows, cols, -bound, bound, rng)
}

/// Affine layer followed by a learnable PReLU.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Matrix,
    pub slope: Matrix,
}

impl DenseLayer {
    fn init(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        DenseLayer {
            weight: init_weight(in_dim, out_dim, rng),
            bias: Matrix::zeros(1, out_dim),
            slope: Matrix::scalar(INITIAL_PRELU_SLOPE),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct BoundDenseLayer {
    weight: TensorId,
    bias: TensorId,
    slope: TensorId,
}

impl BoundDenseLayer {
    fn forward(&self, tape: &mut Tape, x: TensorId) -> Result<TensorId> {
        let z = tape.matmul(x, self.weight)?;
        let z = tape.add_row_broadcast(z, self.bias)?;
        tape.prelu(z, self.slope)
    }
}

/// Configuration of the outcome generator.
#[derive(Clone, Copy, Debug)]
pub struct OutcomeConfig {
    /// Hidden layers in each arm head.
    pub head_layers: usize,
    /// Hidden layers shared by both heads before the split (0 keeps the
    /// pure two-head form).
    pub shared_layers: usize,
    /// Width of every hidden layer; matches the representation width.
    pub hidden_dim: usize,
}

impl OutcomeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.head_layers == 0 {
            return Err(Error::contract("outcome heads need at least one layer"));
        }
        if self.hidden_dim == 0 {
            return Err(Error::contract("outcome hidden_dim must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct OutcomeHead {
    hidden: Vec<DenseLayer>,
    out_weight: Matrix,
    out_bias: Matrix,
}

impl OutcomeHead {
    fn init(cfg: &OutcomeConfig, in_dim: usize, rng: &mut impl Rng) -> Self {
        let mut hidden = Vec::with_capacity(cfg.head_layers);
        let mut dim = in_dim;
        for _ in 0..cfg.head_layers {
            hidden.push(DenseLayer::init(dim, cfg.hidden_dim, rng));
            dim = cfg.hidden_dim;
        }
        OutcomeHead {
            hidden,
            out_weight: init_weight(dim, 1, rng),
            out_bias: Matrix::zeros(1, 1),
        }
    }
}

/// Two-head potential outcome generator.
#[derive(Clone, Debug)]
pub struct OutcomeGenerator {
    shared: Vec<DenseLayer>,
    treated_head: OutcomeHead,
    control_head: OutcomeHead,
}

impl OutcomeGenerator {
    pub fn init(cfg: &OutcomeConfig, rep_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mut shared = Vec::with_capacity(cfg.shared_layers);
        let mut dim = rep_dim;
        for _ in 0..cfg.shared_layers {
            shared.push(DenseLayer::init(dim, cfg.hidden_dim, rng));
            dim = cfg.hidden_dim;
        }
        Ok(OutcomeGenerator {
            shared,
            treated_head: OutcomeHead::init(cfg, dim, rng),
            control_head: OutcomeHead::init(cfg, dim, rng),
        })
    }

    pub(crate) fn collect_params<'a>(&'a self, out: &mut Vec<&'a Matrix>) {
        for l in &self.shared {
            out.push(&l.weight);
            out.push(&l.bias);
            out.push(&l.slope);
        }
        for head in [&self.treated_head, &self.control_head] {
            for l in &head.hidden {
                out.push(&l.weight);
                out.push(&l.bias);
                out.push(&l.slope);
            }
            out.push(&head.out_weight);
            out.push(&head.out_bias);
        }
    }

    pub(crate) fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Matrix>) {
        for l in &mut self.shared {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
            out.push(&mut l.slope);
        }
        for head in [&mut self.treated_head, &mut self.control_head] {
            for l in &mut head.hidden {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
                out.push(&mut l.slope);
            }
            out.push(&mut head.out_weight);
            out.push(&mut head.out_bias);
        }
    }

    /// Parameter roles in `collect_params` order.
    pub(crate) fn param_kinds(&self, out: &mut Vec<crate::model::ParamKind>) {
        use crate::model::ParamKind::{Bias, Slope, Weight};
        for _ in &self.shared {
            out.extend([Weight, Bias, Slope]);
        }
        for head in [&self.treated_head, &self.control_head] {
            for _ in &head.hidden {
                out.extend([Weight, Bias, Slope]);
            }
            out.extend([Weight, Bias]);
        }
    }

    pub(crate) fn bound_from(
        &self,
        ids: &mut impl Iterator<Item = TensorId>,
    ) -> BoundOutcomeGenerator {
        fn next_dense(ids: &mut impl Iterator<Item = TensorId>) -> BoundDenseLayer {
            BoundDenseLayer {
                weight: ids.next().expect("dense weight id"),
                bias: ids.next().expect("dense bias id"),
                slope: ids.next().expect("dense slope id"),
            }
        }
        fn bind_head(
            head: &OutcomeHead,
            ids: &mut impl Iterator<Item = TensorId>,
        ) -> BoundOutcomeHead {
            BoundOutcomeHead {
                hidden: head.hidden.iter().map(|_| next_dense(ids)).collect(),
                out_weight: ids.next().expect("head out weight id"),
                out_bias: ids.next().expect("head out bias id"),
            }
        }
        let shared = self.shared.iter().map(|_| next_dense(ids)).collect();
        let treated_head = bind_head(&self.treated_head, ids);
        let control_head = bind_head(&self.control_head, ids);
        BoundOutcomeGenerator {
            shared,
            treated_head,
            control_head,
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundOutcomeGenerator {
        let mut params = Vec::new();
        self.collect_params(&mut params);
        let ids: Vec<TensorId> = params
            .into_iter()
            .map(|m| {
                if trainable {
                    tape.param(m)
                } else {
                    tape.constant(m)
                }
            })
            .collect();
        self.bound_from(&mut ids.into_iter())
    }
}

#[derive(Clone, Debug)]
struct BoundOutcomeHead {
    hidden: Vec<BoundDenseLayer>,
    out_weight: TensorId,
    out_bias: TensorId,
}

impl BoundOutcomeHead {
    fn forward(&self, tape: &mut Tape, mut x: TensorId) -> Result<TensorId> {
        for l in &self.hidden {
            x = l.forward(tape, x)?;
        }
        let z = tape.matmul(x, self.out_weight)?;
        tape.add_row_broadcast(z, self.out_bias)
    }
}

#[derive(Clone, Debug)]
pub struct BoundOutcomeGenerator {
    shared: Vec<BoundDenseLayer>,
    treated_head: BoundOutcomeHead,
    control_head: BoundOutcomeHead,
}

/// Per-unit predicted outcomes under both arms, routed into factual and
/// counterfactual columns by the realized assignment.
#[derive(Clone, Copy, Debug)]
pub struct PotentialOutcomeIds {
    /// Nx1 prediction of every unit under treatment.
    pub treated: TensorId,
    /// Nx1 prediction of every unit under control.
    pub control: TensorId,
    /// Nx1 prediction under each unit's realized arm.
    pub factual: TensorId,
    /// Nx1 prediction under each unit's unrealized arm.
    pub counterfactual: TensorId,
}

impl BoundOutcomeGenerator {
    /// Runs both heads over every unit. The treatment vector routes head
    /// outputs into the factual/counterfactual columns.
    pub fn forward(
        &self,
        tape: &mut Tape,
        representations: TensorId,
        treatment: &[u8],
    ) -> Result<PotentialOutcomeIds> {
        let n = tape.tensor(representations).rows;
        if treatment.len() != n {
            return Err(Error::dimension(
                "generate_outcomes",
                format!("{} treatment entries for {n} units", treatment.len()),
            ));
        }
        let mut x = representations;
        for l in &self.shared {
            x = l.forward(tape, x)?;
        }
        let treated = self.treated_head.forward(tape, x)?;
        let control = self.control_head.forward(tape, x)?;

        let t_mask: Vec<f64> = treatment.iter().map(|&t| t as f64).collect();
        let c_mask: Vec<f64> = treatment.iter().map(|&t| 1.0 - t as f64).collect();
        let t_mask = tape.constant(&Matrix::column(&t_mask));
        let c_mask = tape.constant(&Matrix::column(&c_mask));

        let fact_t = tape.mul_elem(t_mask, treated)?;
        let fact_c = tape.mul_elem(c_mask, control)?;
        let factual = tape.add(fact_t, fact_c)?;
        let cf_t = tape.mul_elem(c_mask, treated)?;
        let cf_c = tape.mul_elem(t_mask, control)?;
        let counterfactual = tape.add(cf_t, cf_c)?;

        Ok(PotentialOutcomeIds {
            treated,
            control,
            factual,
            counterfactual,
        })
    }
}

/// Mean squared error between predicted and observed outcomes.
pub fn factual_loss(tape: &mut Tape, predicted: TensorId, observed: TensorId) -> Result<TensorId> {
    if tape.tensor(predicted).shape() != tape.tensor(observed).shape() {
        return Err(Error::dimension(
            "factual_loss",
            "prediction and target shapes differ".to_string(),
        ));
    }
    let diff = tape.sub(predicted, observed)?;
    let sq = tape.mul_elem(diff, diff)?;
    tape.mean(sq)
}

/// Extracted node-level potential outcomes, for effect estimation.
#[derive(Clone, Debug)]
pub struct PotentialOutcomes {
    pub treated: Vec<f64>,
    pub control: Vec<f64>,
}

impl PotentialOutcomes {
    pub fn from_tape(tape: &Tape, ids: &PotentialOutcomeIds) -> Self {
        PotentialOutcomes {
            treated: tape.values(ids.treated).to_vec(),
            control: tape.values(ids.control).to_vec(),
        }
    }

    /// Per-unit effect estimates: treated minus control prediction.
    pub fn ite(&self) -> Vec<f64> {
        self.treated
            .iter()
            .zip(&self.control)
            .map(|(a, b)| a - b)
            .collect()
    }

    /// Mean of the per-unit effects.
    pub fn ate(&self) -> f64 {
        let ite = self.ite();
        ite.iter().sum::<f64>() / ite.len() as f64
    }
}

/// Configuration of the counterfactual outcome discriminator.
#[derive(Clone, Copy, Debug)]
pub struct CfConfig {
    /// Hidden layers per arm head.
    pub layers: usize,
    pub hidden_dim: usize,
}

impl CfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::contract(
                "discriminator heads need at least one layer",
            ));
        }
        if self.hidden_dim == 0 {
            return Err(Error::contract("discriminator hidden_dim must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct CfHead {
    hidden: Vec<DenseLayer>,
    out_weight: Matrix,
    out_bias: Matrix,
}

impl CfHead {
    fn init(cfg: &CfConfig, rep_dim: usize, rng: &mut impl Rng) -> Self {
        let mut hidden = Vec::with_capacity(cfg.layers);
        let mut dim = rep_dim;
        for _ in 0..cfg.layers {
            // +1: the candidate outcome is concatenated to every layer input.
            hidden.push(DenseLayer::init(dim + 1, cfg.hidden_dim, rng));
            dim = cfg.hidden_dim;
        }
        CfHead {
            hidden,
            out_weight: init_weight(dim + 1, 1, rng),
            out_bias: Matrix::zeros(1, 1),
        }
    }
}

/// Two-head counterfactual outcome discriminator.
#[derive(Clone, Debug)]
pub struct CfDiscriminator {
    treated_head: CfHead,
    control_head: CfHead,
}

impl CfDiscriminator {
    pub fn init(cfg: &CfConfig, rep_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(CfDiscriminator {
            treated_head: CfHead::init(cfg, rep_dim, rng),
            control_head: CfHead::init(cfg, rep_dim, rng),
        })
    }

    pub(crate) fn collect_params<'a>(&'a self, out: &mut Vec<&'a Matrix>) {
        for head in [&self.treated_head, &self.control_head] {
            for l in &head.hidden {
                out.push(&l.weight);
                out.push(&l.bias);
                out.push(&l.slope);
            }
            out.push(&head.out_weight);
            out.push(&head.out_bias);
        }
    }

    pub(crate) fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Matrix>) {
        for head in [&mut self.treated_head, &mut self.control_head] {
            for l in &mut head.hidden {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
                out.push(&mut l.slope);
            }
            out.push(&mut head.out_weight);
            out.push(&mut head.out_bias);
        }
    }

    /// Parameter roles in `collect_params` order.
    pub(crate) fn param_kinds(&self, out: &mut Vec<crate::model::ParamKind>) {
        use crate::model::ParamKind::{Bias, Slope, Weight};
        for head in [&self.treated_head, &self.control_head] {
            for _ in &head.hidden {
                out.extend([Weight, Bias, Slope]);
            }
            out.extend([Weight, Bias]);
        }
    }

    pub(crate) fn bound_from(
        &self,
        ids: &mut impl Iterator<Item = TensorId>,
    ) -> BoundCfDiscriminator {
        fn bind_head(head: &CfHead, ids: &mut impl Iterator<Item = TensorId>) -> BoundCfHead {
            BoundCfHead {
                hidden: head
                    .hidden
                    .iter()
                    .map(|_| BoundDenseLayer {
                        weight: ids.next().expect("cf weight id"),
                        bias: ids.next().expect("cf bias id"),
                        slope: ids.next().expect("cf slope id"),
                    })
                    .collect(),
                out_weight: ids.next().expect("cf out weight id"),
                out_bias: ids.next().expect("cf out bias id"),
            }
        }
        let treated_head = bind_head(&self.treated_head, ids);
        let control_head = bind_head(&self.control_head, ids);
        BoundCfDiscriminator {
            treated_head,
            control_head,
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundCfDiscriminator {
        let mut params = Vec::new();
        self.collect_params(&mut params);
        let ids: Vec<TensorId> = params
            .into_iter()
            .map(|m| {
                if trainable {
                    tape.param(m)
                } else {
                    tape.constant(m)
                }
            })
            .collect();
        self.bound_from(&mut ids.into_iter())
    }
}

#[derive(Clone, Debug)]
struct BoundCfHead {
    hidden: Vec<BoundDenseLayer>,
    out_weight: TensorId,
    out_bias: TensorId,
}

impl BoundCfHead {
    /// Probability that each candidate outcome is factual; the candidate
    /// column is appended to every layer input, including the output layer's.
    fn forward(&self, tape: &mut Tape, rows: TensorId, candidate: TensorId) -> Result<TensorId> {
        let mut x = rows;
        for l in &self.hidden {
            let with_outcome = tape.concat_cols(x, candidate)?;
            x = l.forward(tape, with_outcome)?;
        }
        let with_outcome = tape.concat_cols(x, candidate)?;
        let z = tape.matmul(with_outcome, self.out_weight)?;
        let z = tape.add_row_broadcast(z, self.out_bias)?;
        Ok(tape.sigmoid(z))
    }
}

#[derive(Clone, Debug)]
pub struct BoundCfDiscriminator {
    treated_head: BoundCfHead,
    control_head: BoundCfHead,
}

/// Index sets fed to the discriminator in one step: equally many treated and
/// control units so each head sees as many factual as counterfactual
/// candidates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BalancedBatch {
    pub treated: Vec<usize>,
    pub control: Vec<usize>,
}

impl BalancedBatch {
    /// Subsamples the majority group of `pool` down to the minority size.
    /// Both groups must be represented in the pool.
    pub fn draw(treatment: &[u8], pool: &[usize], rng: &mut impl Rng) -> Result<BalancedBatch> {
        let mut treated: Vec<usize> = pool
            .iter()
            .copied()
            .filter(|&i| treatment[i] == 1)
            .collect();
        let mut control: Vec<usize> = pool
            .iter()
            .copied()
            .filter(|&i| treatment[i] == 0)
            .collect();
        if treated.is_empty() || control.is_empty() {
            return Err(Error::contract(
                "balanced batch needs both treated and control units in the pool",
            ));
        }
        let m = treated.len().min(control.len());
        subsample(&mut treated, m, rng);
        subsample(&mut control, m, rng);
        Ok(BalancedBatch { treated, control })
    }

    pub fn size(&self) -> usize {
        self.treated.len() + self.control.len()
    }
}

fn subsample(items: &mut Vec<usize>, m: usize, rng: &mut impl Rng) {
    // Partial Fisher-Yates: the first m slots become the sample.
    for i in 0..m {
        let j = rng.gen_range(i..items.len());
        items.swap(i, j);
    }
    items.truncate(m);
    items.sort_unstable();
}

/// One probability column per (group, candidate kind). Factual candidates
/// carry truth label 1, counterfactual candidates truth label 0.
#[derive(Clone, Copy, Debug)]
pub struct DiscriminatorProbs {
    /// Treated units' observed outcomes scored by the treated head.
    pub factual_treated: TensorId,
    /// Control units' predicted treated outcomes scored by the treated head.
    pub counterfactual_treated: TensorId,
    /// Control units' observed outcomes scored by the control head.
    pub factual_control: TensorId,
    /// Treated units' predicted control outcomes scored by the control head.
    pub counterfactual_control: TensorId,
}

/// Scores all four (group, candidate) combinations of a balanced batch.
/// Candidates are routed to the head of the arm the outcome belongs to.
pub fn discriminator_probs(
    tape: &mut Tape,
    representations: TensorId,
    observed: TensorId,
    outcomes: &PotentialOutcomeIds,
    batch: &BalancedBatch,
    disc: &BoundCfDiscriminator,
) -> Result<DiscriminatorProbs> {
    let treated_idx: Rc<[usize]> = batch.treated.clone().into();
    let control_idx: Rc<[usize]> = batch.control.clone().into();

    let r_treated = tape.gather_rows(representations, Rc::clone(&treated_idx))?;
    let r_control = tape.gather_rows(representations, Rc::clone(&control_idx))?;

    let y_treated = tape.gather_rows(observed, Rc::clone(&treated_idx))?;
    let y_control = tape.gather_rows(observed, Rc::clone(&control_idx))?;
    let yhat_treated_of_control = tape.gather_rows(outcomes.treated, Rc::clone(&control_idx))?;
    let yhat_control_of_treated = tape.gather_rows(outcomes.control, Rc::clone(&treated_idx))?;

    Ok(DiscriminatorProbs {
        factual_treated: disc.treated_head.forward(tape, r_treated, y_treated)?,
        counterfactual_treated: disc.treated_head.forward(
            tape,
            r_control,
            yhat_treated_of_control,
        )?,
        factual_control: disc.control_head.forward(tape, r_control, y_control)?,
        counterfactual_control: disc.control_head.forward(
            tape,
            r_treated,
            yhat_control_of_treated,
        )?,
    })
}

/// Cross-entropy of the discriminator against the truth convention
/// (factual candidates are 1, counterfactual candidates are 0), averaged
/// over all 2n (unit, arm) pairs of the batch. Log arguments are clamped.
pub fn adversarial_loss(
    tape: &mut Tape,
    probs: &DiscriminatorProbs,
    require_balanced: bool,
) -> Result<TensorId> {
    let m_ft = tape.tensor(probs.factual_treated).rows;
    let m_fc = tape.tensor(probs.factual_control).rows;
    let m_ct = tape.tensor(probs.counterfactual_treated).rows;
    let m_cc = tape.tensor(probs.counterfactual_control).rows;
    if require_balanced && (m_ft != m_fc || m_ct != m_cc || m_ft != m_cc) {
        return Err(Error::contract(format!(
            "unbalanced discriminator batch: factual {m_ft}/{m_fc}, counterfactual {m_ct}/{m_cc}"
        )));
    }
    let n_units = m_ft + m_fc;
    if n_units == 0 {
        return Err(Error::contract("adversarial loss on an empty batch"));
    }

    let mut total: Option<TensorId> = None;
    let mut add_term = |tape: &mut Tape, term: TensorId| -> Result<()> {
        total = Some(match total {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
        Ok(())
    };

    for &p in [probs.factual_treated, probs.factual_control].iter() {
        let log_p = tape.ln_clamped(p, LOG_CLAMP);
        let s = tape.sum(log_p);
        add_term(tape, s)?;
    }
    for &p in [probs.counterfactual_treated, probs.counterfactual_control].iter() {
        let rows = tape.tensor(p).rows;
        let ones = tape.constant(&Matrix::filled(rows, 1, 1.0));
        let complement = tape.sub(ones, p)?;
        let log_c = tape.ln_clamped(complement, LOG_CLAMP);
        let s = tape.sum(log_c);
        add_term(tape, s)?;
    }
    let sum = total.expect("four terms were added");
    Ok(tape.scale(sum, -1.0 / (2.0 * n_units as f64)))
}
