//! Reverse-mode differentiation over dense matrices.
//!
//! Operations are recorded on a [`Tape`] in the order they execute, which is
//! a topological order of the computation graph by construction. A single
//! backward sweep from the loss node therefore visits every node exactly
//! once; running `backward` a second time on the same tape is an error.
//!
//! A tape and its tensors are confined to one thread of execution.
//! Independent training runs each own their tapes.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorId(usize);

/// A node in the computation graph: a dense matrix, plus a gradient slot of
/// identical shape that is filled in by the backward sweep.
#[derive(Debug)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(self.rows, self.cols, self.values.clone())
            .expect("tensor values match its shape")
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul { a: TensorId, b: TensorId },
    Add { a: TensorId, b: TensorId },
    Sub { a: TensorId, b: TensorId },
    MulElem { a: TensorId, b: TensorId },
    AddRowBroadcast { x: TensorId, row: TensorId },
    Scale { x: TensorId, factor: f64 },
    Transpose { x: TensorId },
    Sigmoid { x: TensorId },
    PRelu { x: TensorId, slope: TensorId },
    LeakyRelu { x: TensorId, slope: f64 },
    SoftmaxRows { x: TensorId },
    MaskedSoftmaxRows { x: TensorId, mask: Rc<[bool]> },
    MeanAxis0 { x: TensorId },
    Mean { x: TensorId },
    Sum { x: TensorId },
    LnClamped { x: TensorId, floor: f64 },
    GatherRows { x: TensorId, indices: Rc<[usize]> },
    ConcatCols { a: TensorId, b: TensorId },
}

/// Records forward operations and computes gradients in reverse.
pub struct Tape {
    nodes: Vec<Tensor>,
    ops: Vec<Op>,
    backward_done: bool,
    saturation_events: u64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            ops: Vec::new(),
            backward_done: false,
            saturation_events: 0,
        }
    }

    /// Number of times a log argument hit the clamp floor on this tape.
    pub fn saturation_events(&self) -> u64 {
        self.saturation_events
    }

    pub fn tensor(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0]
    }

    pub fn values(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].values
    }

    /// Gradient of the loss w.r.t. this tensor, once `backward` has run.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Value of a 1x1 tensor. Panics if the tensor is not a scalar.
    pub fn scalar(&self, id: TensorId) -> f64 {
        let t = &self.nodes[id.0];
        assert!(
            t.rows == 1 && t.cols == 1,
            "scalar() on a {}x{} tensor",
            t.rows,
            t.cols
        );
        t.values[0]
    }

    fn push(
        &mut self,
        rows: usize,
        cols: usize,
        values: Vec<f64>,
        requires_grad: bool,
        op: Op,
    ) -> TensorId {
        debug_assert_eq!(values.len(), rows * cols);
        let id = TensorId(self.nodes.len());
        self.nodes.push(Tensor {
            rows,
            cols,
            values,
            requires_grad,
            grad: None,
        });
        self.ops.push(op);
        id
    }

    fn needs_grad(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Insert a trainable leaf; its gradient is available after `backward`.
    pub fn param(&mut self, m: &Matrix) -> TensorId {
        self.push(m.rows(), m.cols(), m.data().to_vec(), true, Op::Leaf)
    }

    /// Insert a non-trainable leaf.
    pub fn constant(&mut self, m: &Matrix) -> TensorId {
        self.push(m.rows(), m.cols(), m.data().to_vec(), false, Op::Leaf)
    }

    pub fn constant_scalar(&mut self, value: f64) -> TensorId {
        self.push(1, 1, vec![value], false, Op::Leaf)
    }

    // ── forward operations ──────────────────────────────────────────────

    /// Standard matrix product.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ar, ac) = self.tensor(a).shape();
        let (br, bc) = self.tensor(b).shape();
        if ac != br {
            return Err(Error::dimension("matmul", format!("{ar}x{ac} * {br}x{bc}")));
        }
        let mut out = vec![0.0; ar * bc];
        matmul_into(
            &self.nodes[a.0].values,
            ar,
            ac,
            &self.nodes[b.0].values,
            bc,
            &mut out,
        );
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(ar, bc, out, rg, Op::Matmul { a, b }))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ar, ac) = self.tensor(a).shape();
        if (ar, ac) != self.tensor(b).shape() {
            let (br, bc) = self.tensor(b).shape();
            return Err(Error::dimension("add", format!("{ar}x{ac} + {br}x{bc}")));
        }
        let values = zip_map(&self.nodes[a.0].values, &self.nodes[b.0].values, |x, y| {
            x + y
        });
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(ar, ac, values, rg, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ar, ac) = self.tensor(a).shape();
        if (ar, ac) != self.tensor(b).shape() {
            let (br, bc) = self.tensor(b).shape();
            return Err(Error::dimension("sub", format!("{ar}x{ac} - {br}x{bc}")));
        }
        let values = zip_map(&self.nodes[a.0].values, &self.nodes[b.0].values, |x, y| {
            x - y
        });
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(ar, ac, values, rg, Op::Sub { a, b }))
    }

    /// Hadamard product.
    pub fn mul_elem(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ar, ac) = self.tensor(a).shape();
        if (ar, ac) != self.tensor(b).shape() {
            let (br, bc) = self.tensor(b).shape();
            return Err(Error::dimension(
                "mul_elem",
                format!("{ar}x{ac} * {br}x{bc}"),
            ));
        }
        let values = zip_map(&self.nodes[a.0].values, &self.nodes[b.0].values, |x, y| {
            x * y
        });
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(ar, ac, values, rg, Op::MulElem { a, b }))
    }

    /// Adds a 1xC row vector to every row of an RxC matrix.
    pub fn add_row_broadcast(&mut self, x: TensorId, row: TensorId) -> Result<TensorId> {
        let (xr, xc) = self.tensor(x).shape();
        let (rr, rc) = self.tensor(row).shape();
        if rr != 1 || rc != xc {
            return Err(Error::dimension(
                "add_row_broadcast",
                format!("{xr}x{xc} + {rr}x{rc}"),
            ));
        }
        let mut values = self.nodes[x.0].values.clone();
        for r in 0..xr {
            for c in 0..xc {
                values[r * xc + c] += self.nodes[row.0].values[c];
            }
        }
        let rg = self.needs_grad(&[x, row]);
        Ok(self.push(xr, xc, values, rg, Op::AddRowBroadcast { x, row }))
    }

    /// Multiplication by a compile-time constant.
    pub fn scale(&mut self, x: TensorId, factor: f64) -> TensorId {
        let (r, c) = self.tensor(x).shape();
        let values = self.nodes[x.0].values.iter().map(|v| v * factor).collect();
        let rg = self.needs_grad(&[x]);
        self.push(r, c, values, rg, Op::Scale { x, factor })
    }

    pub fn transpose(&mut self, x: TensorId) -> TensorId {
        let (r, c) = self.tensor(x).shape();
        let src = &self.nodes[x.0].values;
        let mut values = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                values[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.needs_grad(&[x]);
        self.push(c, r, values, rg, Op::Transpose { x })
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        let (r, c) = self.tensor(x).shape();
        let values = self.nodes[x.0]
            .values
            .iter()
            .map(|&v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let rg = self.needs_grad(&[x]);
        self.push(r, c, values, rg, Op::Sigmoid { x })
    }

    /// Parametric ReLU; `slope` is a 1x1 learnable tensor applied on the
    /// negative half-axis.
    pub fn prelu(&mut self, x: TensorId, slope: TensorId) -> Result<TensorId> {
        let (sr, sc) = self.tensor(slope).shape();
        if sr != 1 || sc != 1 {
            return Err(Error::dimension("prelu", format!("slope is {sr}x{sc}")));
        }
        let (r, c) = self.tensor(x).shape();
        let s = self.nodes[slope.0].values[0];
        let values = self.nodes[x.0]
            .values
            .iter()
            .map(|&v| if v >= 0.0 { v } else { s * v })
            .collect();
        let rg = self.needs_grad(&[x, slope]);
        Ok(self.push(r, c, values, rg, Op::PRelu { x, slope }))
    }

    /// Leaky ReLU with a fixed slope.
    pub fn leaky_relu(&mut self, x: TensorId, slope: f64) -> TensorId {
        let (r, c) = self.tensor(x).shape();
        let values = self.nodes[x.0]
            .values
            .iter()
            .map(|&v| if v >= 0.0 { v } else { slope * v })
            .collect();
        let rg = self.needs_grad(&[x]);
        self.push(r, c, values, rg, Op::LeakyRelu { x, slope })
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, x: TensorId) -> TensorId {
        let (r, c) = self.tensor(x).shape();
        let src = &self.nodes[x.0].values;
        let mut values = vec![0.0; r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..c {
                let e = (row[j] - max).exp();
                values[i * c + j] = e;
                sum += e;
            }
            for j in 0..c {
                values[i * c + j] /= sum;
            }
        }
        let rg = self.needs_grad(&[x]);
        self.push(r, c, values, rg, Op::SoftmaxRows { x })
    }

    /// Row-wise softmax restricted to `mask`ed-in entries; masked-out entries
    /// are exactly zero in the output. Every row must keep at least one entry.
    pub fn masked_softmax_rows(&mut self, x: TensorId, mask: Rc<[bool]>) -> Result<TensorId> {
        let (r, c) = self.tensor(x).shape();
        if mask.len() != r * c {
            return Err(Error::dimension(
                "masked_softmax_rows",
                format!("mask of {} entries for {r}x{c}", mask.len()),
            ));
        }
        let src = &self.nodes[x.0].values;
        let mut values = vec![0.0; r * c];
        for i in 0..r {
            let mut max = f64::NEG_INFINITY;
            for j in 0..c {
                if mask[i * c + j] {
                    max = max.max(src[i * c + j]);
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(Error::contract(format!(
                    "masked_softmax_rows: row {i} has no unmasked entries"
                )));
            }
            let mut sum = 0.0;
            for j in 0..c {
                if mask[i * c + j] {
                    let e = (src[i * c + j] - max).exp();
                    values[i * c + j] = e;
                    sum += e;
                }
            }
            for j in 0..c {
                if mask[i * c + j] {
                    values[i * c + j] /= sum;
                }
            }
        }
        let rg = self.needs_grad(&[x]);
        Ok(self.push(r, c, values, rg, Op::MaskedSoftmaxRows { x, mask }))
    }

    /// Column-wise mean: RxC -> 1xC.
    pub fn mean_axis0(&mut self, x: TensorId) -> Result<TensorId> {
        let (r, c) = self.tensor(x).shape();
        if r == 0 {
            return Err(Error::contract("mean_axis0 of an empty matrix"));
        }
        let src = &self.nodes[x.0].values;
        let mut values = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                values[j] += src[i * c + j];
            }
        }
        for v in values.iter_mut() {
            *v /= r as f64;
        }
        let rg = self.needs_grad(&[x]);
        Ok(self.push(1, c, values, rg, Op::MeanAxis0 { x }))
    }

    /// Mean of all entries: RxC -> 1x1.
    pub fn mean(&mut self, x: TensorId) -> Result<TensorId> {
        let t = self.tensor(x);
        let n = t.values.len();
        if n == 0 {
            return Err(Error::contract("mean of an empty matrix"));
        }
        let value = t.values.iter().sum::<f64>() / n as f64;
        let rg = self.needs_grad(&[x]);
        Ok(self.push(1, 1, vec![value], rg, Op::Mean { x }))
    }

    /// Sum of all entries: RxC -> 1x1.
    pub fn sum(&mut self, x: TensorId) -> TensorId {
        let value = self.nodes[x.0].values.iter().sum::<f64>();
        let rg = self.needs_grad(&[x]);
        self.push(1, 1, vec![value], rg, Op::Sum { x })
    }

    /// Element-wise ln(max(x, floor)). Inputs at or below the floor count as
    /// saturation events; their derivative is zero.
    pub fn ln_clamped(&mut self, x: TensorId, floor: f64) -> TensorId {
        let (r, c) = self.tensor(x).shape();
        let mut saturated = 0;
        let values = self.nodes[x.0]
            .values
            .iter()
            .map(|&v| {
                if v <= floor {
                    saturated += 1;
                    floor.ln()
                } else {
                    v.ln()
                }
            })
            .collect();
        self.saturation_events += saturated;
        let rg = self.needs_grad(&[x]);
        self.push(r, c, values, rg, Op::LnClamped { x, floor })
    }

    /// Selects rows by index (duplicates allowed): RxC -> KxC.
    pub fn gather_rows(&mut self, x: TensorId, indices: Rc<[usize]>) -> Result<TensorId> {
        let (r, c) = self.tensor(x).shape();
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(Error::dimension(
                "gather_rows",
                format!("row {bad} out of {r}"),
            ));
        }
        let src = &self.nodes[x.0].values;
        let mut values = Vec::with_capacity(indices.len() * c);
        for &i in indices.iter() {
            values.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let rows = indices.len();
        let rg = self.needs_grad(&[x]);
        Ok(self.push(rows, c, values, rg, Op::GatherRows { x, indices }))
    }

    /// Horizontal concatenation: RxA | RxB -> Rx(A+B).
    pub fn concat_cols(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ar, ac) = self.tensor(a).shape();
        let (br, bc) = self.tensor(b).shape();
        if ar != br {
            return Err(Error::dimension(
                "concat_cols",
                format!("{ar}x{ac} | {br}x{bc}"),
            ));
        }
        let mut values = Vec::with_capacity(ar * (ac + bc));
        for i in 0..ar {
            values.extend_from_slice(&self.nodes[a.0].values[i * ac..(i + 1) * ac]);
            values.extend_from_slice(&self.nodes[b.0].values[i * bc..(i + 1) * bc]);
        }
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(ar, ac + bc, values, rg, Op::ConcatCols { a, b }))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Accumulates dLoss/dNode into every `requires_grad` node reachable from
    /// `loss`, which must be a 1x1 tensor. Each node is visited exactly once;
    /// calling `backward` twice on one tape is a contract violation.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.backward_done {
            return Err(Error::contract("backward already run on this tape"));
        }
        self.backward_done = true;
        let t = self.tensor(loss);
        if t.rows != 1 || t.cols != 1 {
            return Err(Error::contract(format!(
                "backward target must be scalar, got {}x{}",
                t.rows, t.cols
            )));
        }

        for node in self.nodes.iter_mut() {
            if node.requires_grad {
                node.grad = Some(vec![0.0; node.values.len()]);
            }
        }
        if !self.nodes[loss.0].requires_grad {
            // Loss does not depend on any parameter; all gradients stay zero.
            return Ok(());
        }
        self.nodes[loss.0].grad.as_mut().unwrap()[0] = 1.0;

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let grad = self.nodes[i].grad.take().unwrap();
            self.propagate(i, &grad);
            self.nodes[i].grad = Some(grad);
        }
        Ok(())
    }

    fn propagate(&mut self, node: usize, grad: &[f64]) {
        // Borrow dance: ops and nodes live in parallel vectors, so the op is
        // read by index and gradients are written through split lookups.
        match &self.ops[node] {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (a, b) = (*a, *b);
                let (ar, ac) = self.tensor(a).shape();
                let bc = self.tensor(b).cols;
                if self.nodes[a.0].requires_grad {
                    // dA[i,k] = sum_j G[i,j] * B[k,j]
                    let mut da = vec![0.0; ar * ac];
                    {
                        let bvals = &self.nodes[b.0].values;
                        for i in 0..ar {
                            let grow = &grad[i * bc..(i + 1) * bc];
                            let darow = &mut da[i * ac..(i + 1) * ac];
                            for (k, dak) in darow.iter_mut().enumerate() {
                                let brow = &bvals[k * bc..(k + 1) * bc];
                                let mut acc = 0.0;
                                for j in 0..bc {
                                    acc += grow[j] * brow[j];
                                }
                                *dak += acc;
                            }
                        }
                    }
                    accumulate(self.nodes[a.0].grad.as_mut().unwrap(), &da);
                }
                if self.nodes[b.0].requires_grad {
                    // dB[k,j] = sum_i A[i,k] * G[i,j]
                    let mut db = vec![0.0; self.nodes[b.0].values.len()];
                    {
                        let avals = &self.nodes[a.0].values;
                        for i in 0..ar {
                            let arow = &avals[i * ac..(i + 1) * ac];
                            let grow = &grad[i * bc..(i + 1) * bc];
                            for (k, &aik) in arow.iter().enumerate() {
                                if aik == 0.0 {
                                    continue;
                                }
                                let dbrow = &mut db[k * bc..(k + 1) * bc];
                                for j in 0..bc {
                                    dbrow[j] += aik * grow[j];
                                }
                            }
                        }
                    }
                    accumulate(self.nodes[b.0].grad.as_mut().unwrap(), &db);
                }
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                if self.nodes[a.0].requires_grad {
                    accumulate(self.nodes[a.0].grad.as_mut().unwrap(), grad);
                }
                if self.nodes[b.0].requires_grad {
                    accumulate(self.nodes[b.0].grad.as_mut().unwrap(), grad);
                }
            }
            Op::Sub { a, b } => {
                let (a, b) = (*a, *b);
                if self.nodes[a.0].requires_grad {
                    accumulate(self.nodes[a.0].grad.as_mut().unwrap(), grad);
                }
                if self.nodes[b.0].requires_grad {
                    let g = self.nodes[b.0].grad.as_mut().unwrap();
                    for (gi, &v) in g.iter_mut().zip(grad) {
                        *gi -= v;
                    }
                }
            }
            Op::MulElem { a, b } => {
                let (a, b) = (*a, *b);
                if self.nodes[a.0].requires_grad {
                    let bv = self.nodes[b.0].values.clone();
                    let g = self.nodes[a.0].grad.as_mut().unwrap();
                    for i in 0..g.len() {
                        g[i] += grad[i] * bv[i];
                    }
                }
                if self.nodes[b.0].requires_grad {
                    let av = self.nodes[a.0].values.clone();
                    let g = self.nodes[b.0].grad.as_mut().unwrap();
                    for i in 0..g.len() {
                        g[i] += grad[i] * av[i];
                    }
                }
            }
            Op::AddRowBroadcast { x, row } => {
                let (x, row) = (*x, *row);
                let cols = self.tensor(row).cols;
                if self.nodes[x.0].requires_grad {
                    accumulate(self.nodes[x.0].grad.as_mut().unwrap(), grad);
                }
                if self.nodes[row.0].requires_grad {
                    let g = self.nodes[row.0].grad.as_mut().unwrap();
                    for (i, &v) in grad.iter().enumerate() {
                        g[i % cols] += v;
                    }
                }
            }
            Op::Scale { x, factor } => {
                let (x, factor) = (*x, *factor);
                if self.nodes[x.0].requires_grad {
                    let g = self.nodes[x.0].grad.as_mut().unwrap();
                    for (gi, &v) in g.iter_mut().zip(grad) {
                        *gi += factor * v;
                    }
                }
            }
            Op::Transpose { x } => {
                let x = *x;
                let (xr, xc) = self.tensor(x).shape();
                if self.nodes[x.0].requires_grad {
                    let g = self.nodes[x.0].grad.as_mut().unwrap();
                    for i in 0..xr {
                        for j in 0..xc {
                            g[i * xc + j] += grad[j * xr + i];
                        }
                    }
                }
            }
            Op::Sigmoid { x } => {
                let x = *x;
                if self.nodes[x.0].requires_grad {
                    let out = self.nodes[node].values.clone();
                    let g = self.nodes[x.0].grad.as_mut().unwrap();
                    for i in 0..g.len() {
                        g[i] += grad[i] * out[i] * (1.0 - out[i]);
                    }
                }
            }
            Op::PRelu { x, slope } => {
                let (x, slope) = (*x, *slope);
                let s = self.nodes[slope.0].values[0];
                let xv = self.nodes[x.0].values.clone();
                if self.nodes[x.0].requires_grad {
                    let g = self.nodes[x.0].grad.as_mut().unwrap();
                    for i in 0..g.len() {
                        g[i] += grad[i] * if xv[i] >= 0.0 { 1.0 } else { s };
                    }
                }
                if self.nodes[slope.0].requires_grad {
                    let mut ds = 0.0;
                    for i in 0..xv.len() {
                        if xv[i] < 0.0 {
                            ds += grad[i] * xv[i];
                        }
                    }
                    self.nodes[slope.0].grad.as_mut().unwrap()[0] += ds;
                }
            }
            Op::LeakyRelu { x, slope } => {
                let (x, slope) = (*x, *slope);
                if self.nodes[x.0].requires_grad {
                    let xv = self.nodes[x.0].values.clone();
                    let g = self.nodes[x.0].grad.as_mut().unwrap();
                    for i in 0..g.len() {
                        g[i] += grad[i] * if xv[i] >= 0.0 { 1.0 } else { slope };
                    }
                }
            }
            Op::SoftmaxRows { x } => {
                let x = *x;
                if self.nodes[x.0].requires_grad {
                    let out = self.nodes[node].values.clone();
                    let cols = self.tensor(x).cols;
                    let rows = self.tensor(x).rows;
                    let g = self.nodes[x.0].grad.as_mut().unwrap();
                    for i in 0..rows {
                        let o = &out[i * cols..(i + 1) * cols];
                        let gr = &grad[i * cols..(i + 1) * cols];
                        let dot: f64 = o.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for j in 0..cols {
                            g[i * cols + j] += o[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::MaskedSoftmaxRows { x, mask } => {
                let x = *x;
                let mask = Rc::clone(mask);
                if self.nodes[x.0].requires_grad {
                    let out = self.nodes[node].values.clone();
                    let cols = self.tensor(x).cols;
                    let rows = self.tensor(x).rows;
                    let g = self.nodes[x.0].grad.as_mut().unwrap();
                    for i in 0..rows {
                        let mut dot = 0.0;
                        for j in 0..cols {
                            if mask[i * cols + j] {
                                dot += out[i * cols + j] * grad[i * cols + j];
                            }
                        }
                        for j in 0..cols {
                            if mask[i * cols + j] {
                                g[i * cols + j] += out[i * cols + j] * (grad[i * cols + j] - dot);
                            }
                        }
                    }
                }
            }
            Op::MeanAxis0 { x } => {
                let x = *x;
                if self.nodes[x.0].requires_grad {
                    let (rows, cols) = self.tensor(x).shape();
                    let inv = 1.0 / rows as f64;
                    let g = self.nodes[x.0].grad.as_mut().unwrap();
                    for i in 0..rows {
                        for j in 0..cols {
                            g[i * cols + j] += grad[j] * inv;
                        }
                    }
                }
            }
            Op::Mean { x } => {
                let x = *x;
                if self.nodes[x.0].requires_grad {
                    let g = self.nodes[x.0].grad.as_mut().unwrap();
                    let inv = 1.0 / g.len() as f64;
                    for gi in g.iter_mut() {
                        *gi += grad[0] * inv;
                    }
                }
            }
            Op::Sum { x } => {
                let x = *x;
                if self.nodes[x.0].requires_grad {
                    let g = self.nodes[x.0].grad.as_mut().unwrap();
                    for gi in g.iter_mut() {
                        *gi += grad[0];
                    }
                }
            }
            Op::LnClamped { x, floor } => {
                let (x, floor) = (*x, *floor);
                if self.nodes[x.0].requires_grad {
                    let xv = self.nodes[x.0].values.clone();
                    let g = self.nodes[x.0].grad.as_mut().unwrap();
                    for i in 0..g.len() {
                        if xv[i] > floor {
                            g[i] += grad[i] / xv[i];
                        }
                    }
                }
            }
            Op::GatherRows { x, indices } => {
                let x = *x;
                let indices = Rc::clone(indices);
                if self.nodes[x.0].requires_grad {
                    let cols = self.tensor(x).cols;
                    let g = self.nodes[x.0].grad.as_mut().unwrap();
                    for (k, &src) in indices.iter().enumerate() {
                        for j in 0..cols {
                            g[src * cols + j] += grad[k * cols + j];
                        }
                    }
                }
            }
            Op::ConcatCols { a, b } => {
                let (a, b) = (*a, *b);
                let (rows, ac) = self.tensor(a).shape();
                let bc = self.tensor(b).cols;
                let width = ac + bc;
                if self.nodes[a.0].requires_grad {
                    let g = self.nodes[a.0].grad.as_mut().unwrap();
                    for i in 0..rows {
                        for j in 0..ac {
                            g[i * ac + j] += grad[i * width + j];
                        }
                    }
                }
                if self.nodes[b.0].requires_grad {
                    let g = self.nodes[b.0].grad.as_mut().unwrap();
                    for i in 0..rows {
                        for j in 0..bc {
                            g[i * bc + j] += grad[i * width + ac + j];
                        }
                    }
                }
            }
        }
    }
}

/// out += A (ar x ac) * B (ac x bc), row-major. Zero entries of A are skipped,
/// which leaves results bit-identical for finite inputs and makes products
/// against sparse-in-content matrices (normalized adjacencies) cheap.
fn matmul_into(a: &[f64], ar: usize, ac: usize, b: &[f64], bc: usize, out: &mut [f64]) {
    for i in 0..ar {
        let arow = &a[i * ac..(i + 1) * ac];
        let orow = &mut out[i * bc..(i + 1) * bc];
        for (k, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * bc..(k + 1) * bc];
            for j in 0..bc {
                orow[j] += aik * brow[j];
            }
        }
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn accumulate(target: &mut [f64], src: &[f64]) {
    for (t, &s) in target.iter_mut().zip(src) {
        *t += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity_is_noop() {
        let mut tape = Tape::new();
        let i2 = tape.constant(&Matrix::identity(2));
        let m = tape.constant(&Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let out = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.values(out), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_hand_example() {
        let mut tape = Tape::new();
        let a = tape.constant(&Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.constant(&Matrix::from_vec(2, 1, vec![1.0, 1.0]).unwrap());
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.values(out), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut tape = Tape::new();
        let a = tape.constant(&Matrix::zeros(2, 3));
        let b = tape.constant(&Matrix::zeros(2, 3));
        assert!(matches!(
            tape.matmul(a, b),
            Err(crate::error::Error::Dimension { .. })
        ));
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let mut tape = Tape::new();
        let x = tape.constant(&Matrix::scalar(0.0));
        let s = tape.sigmoid(x);
        assert_eq!(tape.scalar(s), 0.5);
    }

    #[test]
    fn softmax_symmetric_row() {
        let mut tape = Tape::new();
        let x = tape.constant(&Matrix::row(&[0.0, 0.0, 0.0]));
        let s = tape.softmax_rows(x);
        for &v in tape.values(s) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let m = Matrix::uniform(5, 7, -4.0, 4.0, &mut rng);
        let mut tape = Tape::new();
        let x = tape.constant(&m);
        let s = tape.softmax_rows(x);
        for i in 0..5 {
            let sum: f64 = tape.values(s)[i * 7..(i + 1) * 7].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "row {i} sums to {sum}");
        }
    }

    #[test]
    fn prelu_negative_branch() {
        let mut tape = Tape::new();
        let x = tape.constant(&Matrix::scalar(-2.0));
        let slope = tape.constant(&Matrix::scalar(0.25));
        let y = tape.prelu(x, slope).unwrap();
        assert_eq!(tape.scalar(y), -0.5);
    }

    #[test]
    fn backward_simple_product() {
        // loss = sum(a * b) with a = [2, 3], b = [5, 7]
        let mut tape = Tape::new();
        let a = tape.param(&Matrix::row(&[2.0, 3.0]));
        let b = tape.param(&Matrix::row(&[5.0, 7.0]));
        let prod = tape.mul_elem(a, b).unwrap();
        let loss = tape.sum(prod);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[5.0, 7.0]);
        assert_eq!(tape.grad(b).unwrap(), &[2.0, 3.0]);
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut tape = Tape::new();
        let a = tape.param(&Matrix::scalar(1.5));
        let loss = tape.sum(a);
        tape.backward(loss).unwrap();
        assert!(matches!(
            tape.backward(loss),
            Err(crate::error::Error::Contract(_))
        ));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let a = tape.param(&Matrix::row(&[1.0, 2.0]));
        assert!(tape.backward(a).is_err());
    }

    #[test]
    fn constant_loss_has_zero_grads() {
        let mut tape = Tape::new();
        let p = tape.param(&Matrix::scalar(3.0));
        let c = tape.constant_scalar(4.0);
        let loss = tape.sum(c);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(p).unwrap(), &[0.0]);
    }

    #[test]
    fn ln_clamp_counts_saturation() {
        let mut tape = Tape::new();
        let x = tape.constant(&Matrix::row(&[0.5, 0.0]));
        let y = tape.ln_clamped(x, 1e-12);
        assert_eq!(tape.saturation_events(), 1);
        assert!((tape.values(y)[1] - (1e-12f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn gather_and_concat_round_trip_values() {
        let mut tape = Tape::new();
        let m = tape.constant(&Matrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let g = tape.gather_rows(m, vec![2usize, 0].into()).unwrap();
        assert_eq!(tape.values(g), &[5.0, 6.0, 1.0, 2.0]);
        let c = tape.concat_cols(m, m).unwrap();
        assert_eq!(tape.tensor(c).shape(), (3, 4));
        assert_eq!(&tape.values(c)[0..4], &[1.0, 2.0, 1.0, 2.0]);
    }
}
