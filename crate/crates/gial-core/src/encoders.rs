//! Confounder representation learning: stacked graph-convolution or
//! multi-head graph-attention layers mapping (features, structure) to a
//! node representation table, plus the whole-graph summary readout.

use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::numerics::{Matrix, Tape, TensorId};

/// Fixed negative slope of the attention scorer's LeakyReLU.
pub const ATTENTION_LEAKY_SLOPE: f64 = 0.2;
/// Initial value of every learnable PReLU slope.
pub const INITIAL_PRELU_SLOPE: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Gcn,
    Gat,
}

#[derive(Clone, Debug)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub layers: usize,
    /// Width of every node representation, including the final one.
    pub hidden_dim: usize,
    /// Attention heads per layer; ignored for convolutional encoders.
    pub attention_heads: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::contract("encoder needs at least one layer"));
        }
        if self.hidden_dim == 0 {
            return Err(Error::contract("encoder hidden_dim must be positive"));
        }
        if self.kind == EncoderKind::Gat && self.attention_heads == 0 {
            return Err(Error::contract("attention encoder needs at least one head"));
        }
        Ok(())
    }
}

/// How the per-head outputs of an attention layer are merged.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GatMerge {
    /// Side-by-side concatenation; used on intermediary layers.
    Concat,
    /// Arithmetic mean across heads; used on the final layer.
    Average,
}

#[derive(Clone, Debug)]
pub struct GcnLayer {
    pub weight: Matrix,
    pub slope: Matrix,
}

#[derive(Clone, Debug)]
pub struct GatHead {
    pub weight: Matrix,
    /// Attention vector half applied to the collecting node.
    pub attn_self: Matrix,
    /// Attention vector half applied to the neighbor.
    pub attn_neigh: Matrix,
}

#[derive(Clone, Debug)]
pub struct GatLayer {
    pub heads: Vec<GatHead>,
    pub slope: Matrix,
    pub merge: GatMerge,
}

#[derive(Clone, Debug)]
pub enum EncoderLayer {
    Gcn(GcnLayer),
    Gat(GatLayer),
}

/// Stack of encoder layers; owns all learnable parameters.
#[derive(Clone, Debug)]
pub struct Encoder {
    layers: Vec<EncoderLayer>,
}

fn init_weight(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let bound = 1.0 / (rows as f64).sqrt();
    Matrix::uniform(rows, cols, -bound, bound, rng)
}

impl Encoder {
    pub fn init(config: &EncoderConfig, input_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::contract("encoder input_dim must be positive"));
        }
        let d = config.hidden_dim;
        let mut layers = Vec::with_capacity(config.layers);
        let mut in_dim = input_dim;
        for layer_idx in 0..config.layers {
            match config.kind {
                EncoderKind::Gcn => {
                    layers.push(EncoderLayer::Gcn(GcnLayer {
                        weight: init_weight(in_dim, d, rng),
                        slope: Matrix::scalar(INITIAL_PRELU_SLOPE),
                    }));
                    in_dim = d;
                }
                EncoderKind::Gat => {
                    let final_layer = layer_idx + 1 == config.layers;
                    let merge = if final_layer {
                        GatMerge::Average
                    } else {
                        GatMerge::Concat
                    };
                    let heads = (0..config.attention_heads)
                        .map(|_| GatHead {
                            weight: init_weight(in_dim, d, rng),
                            attn_self: init_weight(d, 1, rng),
                            attn_neigh: init_weight(d, 1, rng),
                        })
                        .collect();
                    layers.push(EncoderLayer::Gat(GatLayer {
                        heads,
                        slope: Matrix::scalar(INITIAL_PRELU_SLOPE),
                        merge,
                    }));
                    in_dim = match merge {
                        GatMerge::Concat => config.attention_heads * d,
                        GatMerge::Average => d,
                    };
                }
            }
        }
        Ok(Encoder { layers })
    }

    pub fn layers(&self) -> &[EncoderLayer] {
        &self.layers
    }

    pub fn kind(&self) -> EncoderKind {
        match self.layers.first() {
            Some(EncoderLayer::Gat(_)) => EncoderKind::Gat,
            _ => EncoderKind::Gcn,
        }
    }

    pub(crate) fn collect_params<'a>(&'a self, out: &mut Vec<&'a Matrix>) {
        for layer in &self.layers {
            match layer {
                EncoderLayer::Gcn(l) => {
                    out.push(&l.weight);
                    out.push(&l.slope);
                }
                EncoderLayer::Gat(l) => {
                    for head in &l.heads {
                        out.push(&head.weight);
                        out.push(&head.attn_self);
                        out.push(&head.attn_neigh);
                    }
                    out.push(&l.slope);
                }
            }
        }
    }

    pub(crate) fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Matrix>) {
        for layer in &mut self.layers {
            match layer {
                EncoderLayer::Gcn(l) => {
                    out.push(&mut l.weight);
                    out.push(&mut l.slope);
                }
                EncoderLayer::Gat(l) => {
                    for head in &mut l.heads {
                        out.push(&mut head.weight);
                        out.push(&mut head.attn_self);
                        out.push(&mut head.attn_neigh);
                    }
                    out.push(&mut l.slope);
                }
            }
        }
    }

    /// Parameter roles in `collect_params` order.
    pub(crate) fn param_kinds(&self, out: &mut Vec<crate::model::ParamKind>) {
        use crate::model::ParamKind::{Slope, Weight};
        for layer in &self.layers {
            match layer {
                EncoderLayer::Gcn(_) => out.extend([Weight, Slope]),
                EncoderLayer::Gat(l) => {
                    for _ in &l.heads {
                        out.extend([Weight, Weight, Weight]);
                    }
                    out.push(Slope);
                }
            }
        }
    }

    /// Rebuilds the tape-side view from ids in `collect_params` order.
    pub(crate) fn bound_from(&self, ids: &mut impl Iterator<Item = TensorId>) -> BoundEncoder {
        let layers = self
            .layers
            .iter()
            .map(|layer| match layer {
                EncoderLayer::Gcn(_) => BoundEncoderLayer::Gcn {
                    weight: ids.next().expect("encoder weight id"),
                    slope: ids.next().expect("encoder slope id"),
                },
                EncoderLayer::Gat(l) => {
                    let heads = l
                        .heads
                        .iter()
                        .map(|_| BoundGatHead {
                            weight: ids.next().expect("head weight id"),
                            attn_self: ids.next().expect("head attn_self id"),
                            attn_neigh: ids.next().expect("head attn_neigh id"),
                        })
                        .collect();
                    BoundEncoderLayer::Gat {
                        heads,
                        slope: ids.next().expect("encoder slope id"),
                        merge: l.merge,
                    }
                }
            })
            .collect();
        BoundEncoder { layers }
    }

    /// Binds all parameters onto a tape, trainable or frozen.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundEncoder {
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

/// Graph-derived constants an encoder forward pass needs: the normalized
/// adjacency for convolution layers, the self-plus-neighbors mask for
/// attention layers. Built once per dataset and shared across passes.
#[derive(Clone, Debug)]
pub struct GraphContext {
    n: usize,
    a_norm: Option<Matrix>,
    attn_mask: Option<Rc<[bool]>>,
}

impl GraphContext {
    pub fn new(graph: &Graph, kind: EncoderKind) -> Self {
        let n = graph.node_count();
        match kind {
            EncoderKind::Gcn => GraphContext {
                n,
                a_norm: Some(graph.normalized_adjacency()),
                attn_mask: None,
            },
            EncoderKind::Gat => {
                let mut mask = vec![false; n * n];
                for i in 0..n {
                    mask[i * n + i] = true;
                    for &j in graph.neighbors(i) {
                        mask[i * n + j] = true;
                    }
                }
                GraphContext {
                    n,
                    a_norm: None,
                    attn_mask: Some(mask.into()),
                }
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// Inserts the per-tape constants once.
    pub fn bind(&self, tape: &mut Tape) -> BoundGraphContext {
        BoundGraphContext {
            n: self.n,
            a_norm: self.a_norm.as_ref().map(|m| tape.constant(m)),
            attn_mask: self.attn_mask.clone(),
            ones_col: None,
        }
    }
}

pub struct BoundGraphContext {
    n: usize,
    a_norm: Option<TensorId>,
    attn_mask: Option<Rc<[bool]>>,
    ones_col: Option<TensorId>,
}

impl BoundGraphContext {
    fn ones_col(&mut self, tape: &mut Tape) -> TensorId {
        *self
            .ones_col
            .get_or_insert_with(|| tape.constant(&Matrix::filled(self.n, 1, 1.0)))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundGatHead {
    pub weight: TensorId,
    pub attn_self: TensorId,
    pub attn_neigh: TensorId,
}

pub enum BoundEncoderLayer {
    Gcn {
        weight: TensorId,
        slope: TensorId,
    },
    Gat {
        heads: Vec<BoundGatHead>,
        slope: TensorId,
        merge: GatMerge,
    },
}

/// Tape-side view of an encoder: the same parameters as tensor ids.
pub struct BoundEncoder {
    layers: Vec<BoundEncoderLayer>,
}

/// Forward output plus the attention tables (one per layer and head, in
/// order) for attention encoders; empty for convolutional ones.
pub struct EncoderForward {
    pub representation: TensorId,
    pub attention: Vec<TensorId>,
}

impl BoundEncoder {
    pub fn forward(
        &self,
        tape: &mut Tape,
        features: TensorId,
        ctx: &mut BoundGraphContext,
    ) -> Result<TensorId> {
        Ok(self.forward_detailed(tape, features, ctx)?.representation)
    }

    pub fn forward_detailed(
        &self,
        tape: &mut Tape,
        features: TensorId,
        ctx: &mut BoundGraphContext,
    ) -> Result<EncoderForward> {
        if tape.tensor(features).rows != ctx.n {
            return Err(Error::dimension(
                "encoder_forward",
                format!(
                    "{} feature rows for a graph of {} nodes",
                    tape.tensor(features).rows,
                    ctx.n
                ),
            ));
        }
        let mut out = features;
        let mut attention = Vec::new();
        for layer in &self.layers {
            out = match layer {
                BoundEncoderLayer::Gcn { weight, slope } => {
                    gcn_layer_forward(tape, out, ctx, *weight, *slope)?
                }
                BoundEncoderLayer::Gat {
                    heads,
                    slope,
                    merge,
                } => gat_layer_forward(tape, out, ctx, heads, *slope, *merge, &mut attention)?,
            };
        }
        Ok(EncoderForward {
            representation: out,
            attention,
        })
    }
}

/// One graph-convolution layer: prelu(A_norm * R * W).
pub fn gcn_layer_forward(
    tape: &mut Tape,
    input: TensorId,
    ctx: &mut BoundGraphContext,
    weight: TensorId,
    slope: TensorId,
) -> Result<TensorId> {
    let a_norm = ctx
        .a_norm
        .ok_or_else(|| Error::contract("graph context lacks a normalized adjacency"))?;
    let propagated = tape.matmul(a_norm, input)?;
    let projected = tape.matmul(propagated, weight)?;
    tape.prelu(projected, slope)
}

/// One multi-head attention layer over the one-hop receptive field (each
/// node attends to itself and its neighbors). Per head the pairwise score
/// is LeakyReLU(a_selfᵀ W r_i + a_neighᵀ W r_j), normalized by a masked
/// softmax over the receptive field.
#[allow(clippy::too_many_arguments)]
pub fn gat_layer_forward(
    tape: &mut Tape,
    input: TensorId,
    ctx: &mut BoundGraphContext,
    heads: &[BoundGatHead],
    slope: TensorId,
    merge: GatMerge,
    attention_out: &mut Vec<TensorId>,
) -> Result<TensorId> {
    let mask = ctx
        .attn_mask
        .clone()
        .ok_or_else(|| Error::contract("graph context lacks an attention mask"))?;
    let ones_col = ctx.ones_col(tape);
    let ones_row = tape.transpose(ones_col);

    let mut head_outputs = Vec::with_capacity(heads.len());
    for head in heads {
        let projected = tape.matmul(input, head.weight)?;
        let score_self = tape.matmul(projected, head.attn_self)?;
        let score_neigh = tape.matmul(projected, head.attn_neigh)?;
        // scores[i][j] = score_self[i] + score_neigh[j]
        let left = tape.matmul(score_self, ones_row)?;
        let neigh_row = tape.transpose(score_neigh);
        let right = tape.matmul(ones_col, neigh_row)?;
        let scores = tape.add(left, right)?;
        let scores = tape.leaky_relu(scores, ATTENTION_LEAKY_SLOPE);
        let attention = tape.masked_softmax_rows(scores, Rc::clone(&mask))?;
        attention_out.push(attention);
        head_outputs.push(tape.matmul(attention, projected)?);
    }

    match merge {
        GatMerge::Concat => {
            // Nonlinearity per head, then widths stack side by side.
            let mut activated = Vec::with_capacity(head_outputs.len());
            for h in head_outputs {
                activated.push(tape.prelu(h, slope)?);
            }
            let mut merged = activated[0];
            for &h in &activated[1..] {
                merged = tape.concat_cols(merged, h)?;
            }
            Ok(merged)
        }
        GatMerge::Average => {
            let mut sum = head_outputs[0];
            for &h in &head_outputs[1..] {
                sum = tape.add(sum, h)?;
            }
            let mean = tape.scale(sum, 1.0 / head_outputs.len() as f64);
            tape.prelu(mean, slope)
        }
    }
}

/// Whole-graph structure summary: sigmoid of the column-wise mean of the
/// node representations. 1xD output.
pub fn summary_readout(tape: &mut Tape, representations: TensorId) -> Result<TensorId> {
    if tape.tensor(representations).rows == 0 {
        return Err(Error::contract("summary of an empty representation table"));
    }
    let mean = tape.mean_axis0(representations)?;
    Ok(tape.sigmoid(mean))
}
