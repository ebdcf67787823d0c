//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] is a tape: every op appends one node, so node order is a
//! topological order and [`Graph::backward`] is a single reverse sweep.
//! Graphs are rebuilt every iteration.

use crate::error::{DadaError, Result};
use crate::linalg;
use crate::tensor::{matmul_nt_raw, matmul_raw, matmul_tn_raw, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Reduce over the rows of each column; one output per column.
    Rows,
    /// Reduce over the columns of each row; one output per row.
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Abs(Var),
    L2NormalizeRows {
        input: Var,
        norms: Vec<f64>,
        eps: f64,
    },
    RowNorms(Var),
    SoftmaxRows(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        weights: Vec<f64>,
        probs: Vec<f64>,
    },
    MaskedLogSumExp {
        input: Var,
        mask: Vec<bool>,
        axis: Axis,
    },
    NuclearNorm {
        input: Var,
        direction: Vec<f64>,
    },
    WeightedSum {
        input: Var,
        weights: Vec<f64>,
    },
    ConcatRows(Vec<Var>),
    GatherRows {
        input: Var,
        indices: Vec<usize>,
    },
    BatchNormTrain {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BatchNormEval {
        input: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b) | MatMulNt(a, b) | AddRow(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) => {
                vec![*a, *b]
            }
            Scale(a, _) | Relu(a) | Abs(a) | RowNorms(a) | SoftmaxRows(a) => vec![*a],
            L2NormalizeRows { input, .. }
            | MaskedLogSumExp { input, .. }
            | NuclearNorm { input, .. }
            | WeightedSum { input, .. }
            | GatherRows { input, .. } => vec![*input],
            SoftmaxCrossEntropy { logits, .. } => vec![*logits],
            ConcatRows(parts) => parts.clone(),
            BatchNormTrain {
                input, gamma, beta, ..
            }
            | BatchNormEval {
                input, gamma, beta, ..
            } => vec![*input, *gamma, *beta],
        }
    }

    fn name(&self) -> &'static str {
        use Op::*;
        match self {
            Leaf => "leaf",
            MatMul(..) => "matmul",
            MatMulNt(..) => "matmul_nt",
            AddRow(..) => "add_row",
            Add(..) => "add",
            Sub(..) => "sub",
            Mul(..) => "mul",
            Scale(..) => "scale",
            Relu(..) => "relu",
            Abs(..) => "abs",
            L2NormalizeRows { .. } => "l2_normalize_rows",
            RowNorms(..) => "row_norms",
            SoftmaxRows(..) => "softmax_rows",
            SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            MaskedLogSumExp { .. } => "masked_logsumexp",
            NuclearNorm { .. } => "nuclear_norm",
            WeightedSum { .. } => "weighted_sum",
            ConcatRows(..) => "concat_rows",
            GatherRows { .. } => "gather_rows",
            BatchNormTrain { .. } => "batch_norm_train",
            BatchNormEval { .. } => "batch_norm_eval",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Tape of tensor operations.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn dims(op: &'static str, a: &Tensor, b: &Tensor) -> DadaError {
    DadaError::Dimension {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf, keeping the tensor's own `requires_grad` flag.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Adds a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value.with_requires_grad(true))
    }

    /// Adds a leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value.with_requires_grad(false))
    }

    /// Copies a node's current value in as a constant.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    /// Gradient accumulated on a leaf by [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|&v| self.requires_grad(v));
        self.nodes.push(Node {
            value: value.with_requires_grad(requires_grad),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn mat(&self, v: Var) -> Result<&Tensor> {
        let t = self.value(v);
        if t.shape().len() != 2 {
            return Err(DadaError::contract(format!(
                "expected a matrix, got shape {:?}",
                t.shape()
            )));
        }
        Ok(t)
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.mat(a)?, self.mat(b)?);
        if ta.cols() != tb.rows() {
            return Err(dims("matmul", ta, tb));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let out = Tensor::matrix(m, n, matmul_raw(ta.data(), tb.data(), m, k, n))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`; with row-normalized inputs this is the cosine similarity matrix.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.mat(a)?, self.mat(b)?);
        if ta.cols() != tb.cols() {
            return Err(dims("matmul_nt", ta, tb));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
        let out = Tensor::matrix(m, n, matmul_nt_raw(ta.data(), tb.data(), m, k, n))?;
        Ok(self.push(out, Op::MatMulNt(a, b)))
    }

    /// Entry `(i, j) = ⟨x_i, p_j⟩` for row-normalized `x` and `p`.
    pub fn cosine_similarity_matrix(&mut self, x: Var, p: Var) -> Result<Var> {
        self.matmul_nt(x, p)
    }

    /// Adds a `1×m` row to every row of an `n×m` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.mat(a)?, self.mat(row)?);
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(dims("add_row", ta, tr));
        }
        let c = ta.cols();
        let mut out = ta.clone().into_data();
        for chunk in out.chunks_mut(c) {
            chunk.iter_mut().zip(tr.data()).for_each(|(o, b)| *o += b);
        }
        let out = Tensor::matrix(ta.rows(), c, out)?;
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    fn zip_with(&self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dims(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x)).collect())
            .expect("map preserves shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.map(a, |x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    /// `wa·a + wb·b`
    pub fn lincomb(&mut self, a: Var, wa: f64, b: Var, wb: f64) -> Result<Var> {
        let sa = self.scale(a, wa);
        let sb = self.scale(b, wb);
        self.add(sa, sb)
    }

    // ---- pointwise ----

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| if x > 0.0 { x } else { 0.0 });
        self.push(out, Op::Relu(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.map(a, f64::abs);
        self.push(out, Op::Abs(a))
    }

    // ---- row-wise ----

    /// Divides each row by `max(‖row‖₂, eps)`.
    pub fn l2_normalize_rows(&mut self, a: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(DadaError::contract("l2_normalize_rows needs eps > 0"));
        }
        let ta = self.mat(a)?;
        let c = ta.cols();
        let mut out = ta.data().to_vec();
        let mut norms = Vec::with_capacity(ta.rows());
        for row in out.chunks_mut(c) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let denom = norm.max(eps);
            row.iter_mut().for_each(|v| *v /= denom);
            norms.push(norm);
        }
        let out = Tensor::matrix(ta.rows(), c, out)?;
        Ok(self.push(out, Op::L2NormalizeRows { input: a, norms, eps }))
    }

    /// `n×1` column of row Euclidean norms.
    pub fn row_norms(&mut self, a: Var) -> Result<Var> {
        let ta = self.mat(a)?;
        let norms: Vec<f64> = (0..ta.rows())
            .map(|i| ta.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let out = Tensor::matrix(ta.rows(), 1, norms)?;
        Ok(self.push(out, Op::RowNorms(a)))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.mat(a)?;
        let c = ta.cols();
        let mut out = ta.data().to_vec();
        for row in out.chunks_mut(c) {
            softmax_in_place(row);
        }
        let out = Tensor::matrix(ta.rows(), c, out)?;
        Ok(self.push(out, Op::SoftmaxRows(a)))
    }

    /// Mean over rows of `−log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let n = labels.len().max(1);
        self.weighted_cross_entropy(logits, labels, &vec![1.0 / n as f64; labels.len()])
    }

    /// `Σ_i w_i · (−log softmax(logits_i)[label_i])`.
    pub fn weighted_cross_entropy(&mut self, logits: Var, labels: &[usize], weights: &[f64]) -> Result<Var> {
        let tl = self.mat(logits)?;
        let (n, c) = (tl.rows(), tl.cols());
        if labels.len() != n || weights.len() != n {
            return Err(DadaError::Dimension {
                op: "softmax_cross_entropy",
                lhs: tl.shape().to_vec(),
                rhs: vec![labels.len(), weights.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(DadaError::Index {
                op: "softmax_cross_entropy",
                index: bad,
                bound: c,
            });
        }
        let mut probs = tl.data().to_vec();
        let mut loss = 0.0;
        for (i, row) in tl.data().chunks(c).enumerate() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += weights[i] * (lse - row[labels[i]]);
            softmax_in_place(&mut probs[i * c..(i + 1) * c]);
        }
        let op = Op::SoftmaxCrossEntropy {
            logits,
            labels: labels.to_vec(),
            weights: weights.to_vec(),
            probs,
        };
        Ok(self.push(Tensor::scalar(loss), op))
    }

    /// `log Σ exp(z)` over the masked entries of each column (`Axis::Rows`)
    /// or row (`Axis::Cols`), max-shifted.
    ///
    /// An all-false lane is a contract error.
    pub fn masked_logsumexp(&mut self, a: Var, mask: &[bool], axis: Axis) -> Result<Var> {
        let ta = self.mat(a)?;
        let (r, c) = (ta.rows(), ta.cols());
        if mask.len() != r * c {
            return Err(DadaError::Dimension {
                op: "masked_logsumexp",
                lhs: ta.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let (lanes, len) = match axis {
            Axis::Rows => (c, r),
            Axis::Cols => (r, c),
        };
        let at = |lane: usize, k: usize| match axis {
            Axis::Rows => k * c + lane,
            Axis::Cols => lane * c + k,
        };
        let mut out = Vec::with_capacity(lanes);
        for lane in 0..lanes {
            let max = (0..len)
                .filter(|&k| mask[at(lane, k)])
                .map(|k| ta.data()[at(lane, k)])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(DadaError::contract(format!(
                    "masked_logsumexp: lane {lane} has no active entries"
                )));
            }
            let s: f64 = (0..len)
                .filter(|&k| mask[at(lane, k)])
                .map(|k| (ta.data()[at(lane, k)] - max).exp())
                .sum();
            out.push(max + s.ln());
        }
        let shape = match axis {
            Axis::Rows => vec![1, c],
            Axis::Cols => vec![r, 1],
        };
        let op = Op::MaskedLogSumExp {
            input: a,
            mask: mask.to_vec(),
            axis,
        };
        Ok(self.push(Tensor::new(shape, out)?, op))
    }

    /// Sum of singular values.
    pub fn nuclear_norm(&mut self, a: Var) -> Result<Var> {
        let ta = self.mat(a)?;
        let (norm, direction) = linalg::nuclear_norm_with_grad(ta)?;
        Ok(self.push(Tensor::scalar(norm), Op::NuclearNorm { input: a, direction }))
    }

    // ---- reductions and reshaping ----

    /// `Σ w ⊙ a` as a scalar.
    pub fn weighted_sum(&mut self, a: Var, weights: Vec<f64>) -> Result<Var> {
        let ta = self.value(a);
        if weights.len() != ta.numel() {
            return Err(DadaError::Dimension {
                op: "weighted_sum",
                lhs: ta.shape().to_vec(),
                rhs: vec![weights.len()],
            });
        }
        let s = ta.data().iter().zip(&weights).map(|(x, w)| x * w).sum();
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { input: a, weights }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let n = self.value(a).numel();
        self.weighted_sum(a, vec![1.0; n]).expect("matching length")
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel();
        self.weighted_sum(a, vec![1.0 / n as f64; n]).expect("matching length")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| DadaError::contract("concat_rows of nothing"))?;
        let c = self.mat(*first)?.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.mat(p)?;
            if t.cols() != c {
                return Err(dims("concat_rows", self.value(*first), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::matrix(rows, c, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let out = self.mat(a)?.select_rows(indices)?;
        Ok(self.push(
            out,
            Op::GatherRows {
                input: a,
                indices: indices.to_vec(),
            },
        ))
    }

    // ---- normalization layers ----

    /// Batch normalization with batch statistics (biased variance).
    /// Returns the output and the per-feature batch mean and biased variance.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let tx = self.mat(x)?;
        let (n, c) = (tx.rows(), tx.cols());
        if n < 2 {
            return Err(DadaError::contract(
                "batch norm in train mode needs at least 2 rows",
            ));
        }
        for p in [gamma, beta] {
            let tp = self.mat(p)?;
            if tp.rows() != 1 || tp.cols() != c {
                return Err(dims("batch_norm_train", tx, tp));
            }
        }
        let mut mean = vec![0.0; c];
        for row in tx.data().chunks(c) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; c];
        for row in tx.data().chunks(c) {
            for j in 0..c {
                var[j] += (row[j] - mean[j]).powi(2);
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = tx.data().to_vec();
        for row in xhat.chunks_mut(c) {
            for j in 0..c {
                row[j] = (row[j] - mean[j]) * inv_std[j];
            }
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = xhat.clone();
        for row in out.chunks_mut(c) {
            for j in 0..c {
                row[j] = g[j] * row[j] + b[j];
            }
        }
        let out = Tensor::matrix(n, c, out)?;
        let v = self.push(
            out,
            Op::BatchNormTrain {
                input: x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        );
        Ok((v, mean, var))
    }

    /// Batch normalization with fixed statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], var: &[f64], eps: f64) -> Result<Var> {
        let tx = self.mat(x)?;
        let c = tx.cols();
        if mean.len() != c || var.len() != c {
            return Err(DadaError::Dimension {
                op: "batch_norm_eval",
                lhs: tx.shape().to_vec(),
                rhs: vec![mean.len(), var.len()],
            });
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(c) {
            for j in 0..c {
                row[j] = g[j] * (row[j] - mean[j]) * inv_std[j] + b[j];
            }
        }
        let out = Tensor::matrix(tx.rows(), c, out)?;
        Ok(self.push(
            out,
            Op::BatchNormEval {
                input: x,
                gamma,
                beta,
                mean: mean.to_vec(),
                inv_std,
            },
        ))
    }

    // ---- backward ----

    /// Accumulates `d(loss)/d(leaf)` into every leaf that requires grad.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(DadaError::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !self.requires_grad(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].value.requires_grad() {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                self.nodes[i].value.accumulate_grad(&g);
                continue;
            }
            for (input, delta) in self.local_grads(i, &g) {
                if !self.requires_grad(input) {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                    slot @ None => *slot = Some(delta),
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `i` for upstream gradient `g`.
    fn local_grads(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let val = |v: Var| self.value(v);
        let wants = |v: Var| self.requires_grad(v);
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                let mut out = Vec::new();
                if wants(*a) {
                    out.push((*a, matmul_nt_raw(g, tb.data(), m, n, k)));
                }
                if wants(*b) {
                    out.push((*b, matmul_tn_raw(ta.data(), g, m, k, n)));
                }
                out
            }
            Op::MatMulNt(a, b) => {
                // C = A Bᵀ: dA = G B, dB = Gᵀ A
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                let mut out = Vec::new();
                if wants(*a) {
                    out.push((*a, matmul_raw(g, tb.data(), m, n, k)));
                }
                if wants(*b) {
                    out.push((*b, matmul_tn_raw(g, ta.data(), m, n, k)));
                }
                out
            }
            Op::AddRow(a, row) => {
                let c = val(*row).cols();
                let mut db = vec![0.0; c];
                for chunk in g.chunks(c) {
                    db.iter_mut().zip(chunk).for_each(|(d, x)| *d += x);
                }
                vec![(*a, g.to_vec()), (*row, db)]
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|x| -x).collect())],
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a).data(), val(*b).data());
                vec![
                    (*a, g.iter().zip(tb).map(|(x, y)| x * y).collect()),
                    (*b, g.iter().zip(ta).map(|(x, y)| x * y).collect()),
                ]
            }
            Op::Scale(a, s) => vec![(*a, g.iter().map(|x| x * s).collect())],
            Op::Relu(a) => {
                let x = val(*a).data();
                vec![(
                    *a,
                    g.iter()
                        .zip(x)
                        .map(|(gi, &xi)| if xi > 0.0 { *gi } else { 0.0 })
                        .collect(),
                )]
            }
            Op::Abs(a) => {
                let x = val(*a).data();
                vec![(
                    *a,
                    g.iter()
                        .zip(x)
                        .map(|(gi, &xi)| if xi == 0.0 { 0.0 } else { gi * xi.signum() })
                        .collect(),
                )]
            }
            Op::L2NormalizeRows { input, norms, eps } => {
                let y = node.value.data();
                let c = node.value.cols();
                let mut dx = vec![0.0; y.len()];
                for (r, &norm) in norms.iter().enumerate() {
                    let span = r * c..(r + 1) * c;
                    let (yr, gr) = (&y[span.clone()], &g[span.clone()]);
                    let out = &mut dx[span];
                    if norm > *eps {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            out[j] = (gr[j] - yr[j] * dot) / norm;
                        }
                    } else {
                        for j in 0..c {
                            out[j] = gr[j] / eps;
                        }
                    }
                }
                vec![(*input, dx)]
            }
            Op::RowNorms(a) => {
                let ta = val(*a);
                let c = ta.cols();
                let norms = node.value.data();
                let mut dx = vec![0.0; ta.numel()];
                for (r, &norm) in norms.iter().enumerate() {
                    if norm > 0.0 {
                        for j in 0..c {
                            dx[r * c + j] = g[r] * ta.data()[r * c + j] / norm;
                        }
                    }
                }
                vec![(*a, dx)]
            }
            Op::SoftmaxRows(a) => {
                let y = node.value.data();
                let c = node.value.cols();
                let mut dx = vec![0.0; y.len()];
                for ((yr, gr), out) in y.chunks(c).zip(g.chunks(c)).zip(dx.chunks_mut(c)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        out[j] = yr[j] * (gr[j] - dot);
                    }
                }
                vec![(*a, dx)]
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                weights,
                probs,
            } => {
                let c = val(*logits).cols();
                let mut dx = probs.clone();
                for (r, chunk) in dx.chunks_mut(c).enumerate() {
                    chunk[labels[r]] -= 1.0;
                    chunk.iter_mut().for_each(|v| *v *= g[0] * weights[r]);
                }
                vec![(*logits, dx)]
            }
            Op::MaskedLogSumExp { input, mask, axis } => {
                let ta = val(*input);
                let c = ta.cols();
                let out = node.value.data();
                let dx = ta
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(idx, &z)| {
                        if !mask[idx] {
                            return 0.0;
                        }
                        let lane = match axis {
                            Axis::Rows => idx % c,
                            Axis::Cols => idx / c,
                        };
                        g[lane] * (z - out[lane]).exp()
                    })
                    .collect();
                vec![(*input, dx)]
            }
            Op::NuclearNorm { input, direction } => {
                vec![(*input, direction.iter().map(|d| d * g[0]).collect())]
            }
            Op::WeightedSum { input, weights } => {
                vec![(*input, weights.iter().map(|w| w * g[0]).collect())]
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                parts
                    .iter()
                    .map(|&p| {
                        let len = val(p).numel();
                        let slice = g[offset..offset + len].to_vec();
                        offset += len;
                        (p, slice)
                    })
                    .collect()
            }
            Op::GatherRows { input, indices } => {
                let ta = val(*input);
                let c = ta.cols();
                let mut dx = vec![0.0; ta.numel()];
                for (r, &src) in indices.iter().enumerate() {
                    for j in 0..c {
                        dx[src * c + j] += g[r * c + j];
                    }
                }
                vec![(*input, dx)]
            }
            Op::BatchNormTrain {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = inv_std.len();
                let n = xhat.len() / c;
                let gam = val(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for (gr, xr) in g.chunks(c).zip(xhat.chunks(c)) {
                    for j in 0..c {
                        dbeta[j] += gr[j];
                        dgamma[j] += gr[j] * xr[j];
                    }
                }
                let nf = n as f64;
                let mut dx = vec![0.0; g.len()];
                for ((out, gr), xr) in dx.chunks_mut(c).zip(g.chunks(c)).zip(xhat.chunks(c)) {
                    for j in 0..c {
                        out[j] = gam[j] * inv_std[j] / nf * (nf * gr[j] - dbeta[j] - xr[j] * dgamma[j]);
                    }
                }
                vec![(*input, dx), (*gamma, dgamma), (*beta, dbeta)]
            }
            Op::BatchNormEval {
                input,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let c = inv_std.len();
                let gam = val(*gamma).data();
                let x = val(*input).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut dx = vec![0.0; g.len()];
                for (r, gr) in g.chunks(c).enumerate() {
                    for j in 0..c {
                        let xh = (x[r * c + j] - mean[j]) * inv_std[j];
                        dbeta[j] += gr[j];
                        dgamma[j] += gr[j] * xh;
                        dx[r * c + j] = gr[j] * gam[j] * inv_std[j];
                    }
                }
                vec![(*input, dx), (*gamma, dgamma), (*beta, dbeta)]
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_selection() {
        let mut g = Graph::new();
        let i = g.constant(Tensor::identity(2));
        let b = g.constant(m(2, 2, &[1., 2., 3., 4.]));
        let c = g.matmul(i, b).unwrap();
        assert_eq!(g.value(c).data(), &[1., 2., 3., 4.]);

        let a = g.constant(m(1, 2, &[1., 0.]));
        let b = g.constant(m(2, 1, &[0., 5.]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[0.]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(2, 3));
        let b = g.constant(Tensor::zeros(2, 3));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn relu_values_and_gate() {
        let mut g = Graph::new();
        let x = g.param(m(1, 3, &[-1., 0., 2.]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0., 0., 2.]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0., 0., 1.]);

        let mut g = Graph::new();
        let x = g.param(m(1, 3, &[-1., -2., -0.5]));
        let y = g.relu(x);
        let s = g.sum(y);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
        g.backward(s).unwrap();
        assert!(g.grad(x).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_rows() {
        let mut g = Graph::new();
        let x = g.constant(m(2, 2, &[3., 4., 0.6, 0.8]));
        let y = g.l2_normalize_rows(x, 1e-12).unwrap();
        let v = g.value(y).data();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
        assert!((v[2] - 0.6).abs() < 1e-15 && (v[3] - 0.8).abs() < 1e-15);
        assert!(g.l2_normalize_rows(x, 0.0).is_err());
    }

    #[test]
    fn zero_row_is_guarded() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(1, 3));
        let y = g.l2_normalize_rows(x, 1e-12).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert!(g.value(y).is_finite());
    }

    #[test]
    fn cross_entropy_closed_forms() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::zeros(2, 3));
        let l = g.softmax_cross_entropy(z, &[0, 2]).unwrap();
        assert!((g.value(l).item() - 3f64.ln()).abs() < 1e-12);

        let z = g.constant(m(1, 3, &[100., 0., 0.]));
        let l = g.softmax_cross_entropy(z, &[0]).unwrap();
        assert!(g.value(l).item() < 1e-10);

        let err = g.softmax_cross_entropy(z, &[3]).unwrap_err();
        assert!(matches!(err, DadaError::Index { .. }));
    }

    #[test]
    fn nuclear_norm_closed_forms() {
        let mut g = Graph::new();
        let i = g.constant(Tensor::identity(3));
        let n = g.nuclear_norm(i).unwrap();
        assert!((g.value(n).item() - 3.0).abs() < 1e-12);
        let d = g.constant(m(2, 2, &[2., 0., 0., -3.]));
        let n = g.nuclear_norm(d).unwrap();
        assert!((g.value(n).item() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_similarity_of_unit_rows() {
        let mut g = Graph::new();
        let x = g.constant(m(2, 2, &[1., 0., 0., 1.]));
        let p = g.constant(m(1, 2, &[1., 0.]));
        let s = g.cosine_similarity_matrix(x, p).unwrap();
        assert_eq!(g.value(s).data(), &[1.0, 0.0]);
        let bad = g.constant(Tensor::zeros(1, 3));
        assert!(g.cosine_similarity_matrix(x, bad).is_err());
    }

    #[test]
    fn backward_simple_cases() {
        let mut g = Graph::new();
        let x = g.param(m(1, 3, &[1., -2., 3.]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1., 1., 1.]);

        let mut g = Graph::new();
        let x = g.param(m(1, 3, &[1., -2., 3.]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2., -4., 6.]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut g = Graph::new();
        let x = g.param(m(1, 2, &[1., 2.]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2., 2.]);
        g.zero_grad();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(2, 2));
        assert!(matches!(g.backward(x), Err(DadaError::Contract(_))));
    }

    #[test]
    fn shared_input_sums_consumers() {
        let mut g = Graph::new();
        let x = g.param(m(1, 1, &[3.0]));
        let a = g.scale(x, 2.0);
        let b = g.scale(x, 5.0);
        let c = g.add(a, b).unwrap();
        let s = g.sum(c);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[7.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let x = g.param(m(1, 2, &[1., 2.]));
        let c = g.constant(m(1, 2, &[3., 4.]));
        let y = g.mul(x, c).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap(), &[3., 4.]);
    }

    #[test]
    fn masked_logsumexp_rejects_empty_lane() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(2, 2));
        assert!(g.masked_logsumexp(x, &[true, false, true, false], Axis::Rows).is_err());
        let v = g.masked_logsumexp(x, &[true, false, true, false], Axis::Cols).unwrap();
        assert_eq!(g.value(v).data(), &[0.0, 0.0]);
    }

    #[test]
    fn batch_norm_train_rejects_single_row() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(1, 2));
        let ga = g.constant(Tensor::filled(1, 2, 1.0));
        let be = g.constant(Tensor::zeros(1, 2));
        assert!(g.batch_norm_train(x, ga, be, 1e-5).is_err());
    }
}
