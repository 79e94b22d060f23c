//! Structure mutual-information maximization: negative samples by row
//! shuffling, the bilinear probe d(r, s) = sigmoid(rᵀ W s), and the
//! noise-contrastive loss that scores real node/summary pairs against
//! corrupted ones.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Tape, TensorId};

/// Arguments of every log in the contrastive loss are clamped at this floor
/// to keep saturated probabilities finite; hits are counted on the tape.
pub const LOG_CLAMP: f64 = 1e-12;

/// A feature table with its rows shuffled. The adjacency of the source graph
/// is reused untouched, so corrupted nodes keep their structural position
/// but carry another node's features.
#[derive(Clone, Debug)]
pub struct CorruptedBatch {
    pub features: Matrix,
    /// Row i of `features` is row `permutation[i]` of the original table.
    pub permutation: Vec<usize>,
}

/// Uniformly shuffles feature rows. The identity permutation can occur by
/// chance; a single-row table maps to itself.
pub fn corrupt(features: &Matrix, rng: &mut impl Rng) -> CorruptedBatch {
    let n = features.rows();
    let mut permutation: Vec<usize> = (0..n).collect();
    // Fisher-Yates.
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        permutation.swap(i, j);
    }
    let mut data = Vec::with_capacity(features.len());
    for &src in &permutation {
        data.extend_from_slice(features.row_slice(src));
    }
    let shuffled = Matrix::from_vec(n, features.cols(), data).expect("shape preserved");
    CorruptedBatch {
        features: shuffled,
        permutation,
    }
}

/// The bilinear scoring matrix W of the probe d(r, s) = sigmoid(rᵀ W s).
#[derive(Clone, Debug)]
pub struct MiDiscriminator {
    pub weight: Matrix,
}

impl MiDiscriminator {
    pub fn init(dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        MiDiscriminator {
            weight: Matrix::uniform(dim, dim, -bound, bound, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundMiDiscriminator {
        let weight = if trainable {
            tape.param(&self.weight)
        } else {
            tape.constant(&self.weight)
        };
        BoundMiDiscriminator { weight }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundMiDiscriminator {
    pub weight: TensorId,
}

/// Probability per node that its representation belongs to the summarized
/// graph: sigmoid(R W sᵀ), an Nx1 column. A 1xD `representations` input
/// scores a single node.
pub fn mi_scores(
    tape: &mut Tape,
    representations: TensorId,
    summary: TensorId,
    disc: &BoundMiDiscriminator,
) -> Result<TensorId> {
    let d = tape.tensor(disc.weight).rows;
    let (sr, sc) = tape.tensor(summary).shape();
    if sr != 1 || sc != d || tape.tensor(representations).cols != d {
        return Err(Error::dimension(
            "mi_scores",
            format!(
                "representations {}x{}, summary {sr}x{sc}, scoring matrix {d}x{d}",
                tape.tensor(representations).rows,
                tape.tensor(representations).cols,
            ),
        ));
    }
    let projected = tape.matmul(representations, disc.weight)?;
    let summary_col = tape.transpose(summary);
    let logits = tape.matmul(projected, summary_col)?;
    Ok(tape.sigmoid(logits))
}

/// Noise-contrastive structure MI objective:
/// (1/2n) * (Σ_i ln d(r_i, s) + Σ_j ln(1 - d(r̃_j, s))).
///
/// Always at most zero, approaching zero only under perfect discrimination;
/// it is maximized during training. The summary must come from the positive
/// representations.
pub fn mi_loss(
    tape: &mut Tape,
    positive: TensorId,
    negative: TensorId,
    summary: TensorId,
    disc: &BoundMiDiscriminator,
) -> Result<TensorId> {
    let n = tape.tensor(positive).rows;
    if tape.tensor(negative).shape() != tape.tensor(positive).shape() {
        return Err(Error::dimension(
            "mi_loss",
            "positive and negative batches differ in shape".to_string(),
        ));
    }
    if n == 0 {
        return Err(Error::contract("mi_loss on an empty batch"));
    }
    let pos_scores = mi_scores(tape, positive, summary, disc)?;
    let neg_scores = mi_scores(tape, negative, summary, disc)?;

    let log_pos = tape.ln_clamped(pos_scores, LOG_CLAMP);
    let ones = tape.constant(&Matrix::filled(n, 1, 1.0));
    let neg_complement = tape.sub(ones, neg_scores)?;
    let log_neg = tape.ln_clamped(neg_complement, LOG_CLAMP);

    let pos_sum = tape.sum(log_pos);
    let neg_sum = tape.sum(log_neg);
    let total = tape.add(pos_sum, neg_sum)?;
    Ok(tape.scale(total, 1.0 / (2.0 * n as f64)))
}
