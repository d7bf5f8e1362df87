//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! Nodes are appended in evaluation order, so the tape is topologically sorted
//! by construction and [`Graph::backward`] is a single reverse sweep.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{kernels, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One positive pair of an InfoNCE-style objective over a similarity matrix.
///
/// The term's value is `-s[anchor, positive]/τ + logsumexp_{c ∈ candidates} s[anchor, c]/τ`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NceTerm {
    pub anchor: usize,
    pub positive: usize,
    pub candidates: Vec<usize>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Add(Var, Var),
    AddBias {
        x: Var,
        bias: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Relu(Var),
    Sigmoid(Var),
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    Reshape(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    FillRows {
        x: Var,
        fill: Var,
        mask: Vec<bool>,
    },
    L2NormalizeRows {
        x: Var,
        norms: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    BceWithLogits {
        logits: Var,
        targets: Vec<f64>,
    },
    InfoNce {
        sim: Var,
        terms: Vec<NceTerm>,
        probs: Vec<Vec<f64>>,
        tau: f64,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Vec<f64>,
    needs_grad: bool,
    flops: u64,
}

/// Norms below this are treated as zero by [`Graph::l2_normalize_rows`].
pub const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    dropout_rng: Option<ChaCha8Rng>,
    zero_norm_fallbacks: usize,
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    let cols = *shape.last().unwrap_or(&1);
    let numel: usize = shape.iter().product();
    (if cols == 0 { 0 } else { numel / cols }, cols)
}

impl Graph {
    /// Evaluation-mode graph: dropout is the identity.
    pub fn new() -> Self {
        Self::default()
    }

    /// Training-mode graph whose dropout masks are drawn from `seed`.
    pub fn training(seed: u64) -> Self {
        Self {
            dropout_rng: Some(ChaCha8Rng::seed_from_u64(seed)),
            ..Self::default()
        }
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of rows whose norm fell under [`ZERO_NORM`] during normalization.
    pub fn zero_norm_fallbacks(&self) -> usize {
        self.zero_norm_fallbacks
    }

    /// Analytic forward floating-point operation count of everything recorded so far.
    pub fn flop_count(&self) -> u64 {
        self.nodes.iter().map(|n| n.flops).sum()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        Tensor::new(node.shape.clone(), node.value.clone()).expect("node shape is consistent")
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>, flops: u64) -> Var {
        let needs_grad = match &op {
            Op::Leaf => false,
            _ => self.inputs_need_grad(&op),
        };
        self.nodes.push(Node {
            op,
            shape,
            value,
            needs_grad,
            flops,
        });
        Var(self.nodes.len() - 1)
    }

    fn inputs_need_grad(&self, op: &Op) -> bool {
        let ng = |v: &Var| self.nodes[v.0].needs_grad;
        match op {
            Op::Leaf => false,
            Op::MatMul { a, b, .. } | Op::Add(a, b) => ng(a) || ng(b),
            Op::AddBias { x, bias } => ng(x) || ng(bias),
            Op::LayerNorm { x, gamma, beta, .. } => ng(x) || ng(gamma) || ng(beta),
            Op::FillRows { x, fill, .. } => ng(x) || ng(fill),
            Op::ConcatCols(vs) | Op::ConcatRows(vs) => vs.iter().any(ng),
            Op::Scale { x, .. }
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Dropout { x, .. }
            | Op::Softmax(x)
            | Op::Reshape(x)
            | Op::SliceCols { x, .. }
            | Op::GatherRows { x, .. }
            | Op::L2NormalizeRows { x, .. }
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::BceWithLogits { logits: x, .. }
            | Op::InfoNce { sim: x, .. } => ng(x),
        }
    }

    /// Records a leaf. It participates in differentiation iff `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let v = self.push(Op::Leaf, t.shape().to_vec(), t.data().to_vec(), 0);
        self.nodes[v.0].needs_grad = t.requires_grad;
        v
    }

    /// Records a non-differentiable input.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.leaf(&t))
    }

    /// Matrix product. Accepts `[m,k]·[k,n]` or batched `[g,m,k]·[g,k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` for `[m,k]·[n,k]` or batched `[g,m,k]·[g,n,k]`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let mismatch = || {
            Error::shape(format!(
                "matmul{} operands {sa:?} and {sb:?} are incompatible",
                if trans_b { " (transposed rhs)" } else { "" }
            ))
        };
        let (batch, m, k, kb, n) = match (sa.as_slice(), sb.as_slice()) {
            ([m, k], [r, c]) => {
                let (kb, n) = if trans_b { (*c, *r) } else { (*r, *c) };
                (1, *m, *k, kb, n)
            }
            ([g, m, k], [gb, r, c]) if g == gb => {
                let (kb, n) = if trans_b { (*c, *r) } else { (*r, *c) };
                (*g, *m, *k, kb, n)
            }
            _ => return Err(mismatch()),
        };
        if k != kb {
            return Err(mismatch());
        }
        let mut out = vec![0.0; batch * m * n];
        {
            let av = self.value(a);
            let bv = self.value(b);
            for g in 0..batch {
                let ab = &av[g * m * k..(g + 1) * m * k];
                let bb = &bv[g * k * n..(g + 1) * k * n];
                let ob = &mut out[g * m * n..(g + 1) * m * n];
                if trans_b {
                    kernels::matmul_nt_acc(ab, bb, ob, m, k, n);
                } else {
                    kernels::matmul_nn_acc(ab, bb, ob, m, k, n);
                }
            }
        }
        let shape = if sa.len() == 2 {
            vec![m, n]
        } else {
            vec![batch, m, n]
        };
        let flops = 2 * (batch * m * k * n) as u64;
        Ok(self.push(
            Op::MatMul {
                a,
                b,
                trans_b,
                batch,
                m,
                k,
                n,
            },
            shape,
            out,
            flops,
        ))
    }

    /// Affine map with PyTorch weight layout: `x[r,in] · w[out,in]ᵀ + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul_bt(x, w)?;
        self.add_bias(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "add operands {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        let value: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let n = value.len() as u64;
        Ok(self.push(Op::Add(a, b), self.shape(a).to_vec(), value, n))
    }

    /// Adds a vector to every row of `x` (broadcast over the last axis).
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, cols) = rows_cols(self.shape(x));
        if self.value(bias).len() != cols {
            return Err(Error::shape(format!(
                "bias {:?} does not match last axis of {:?}",
                self.shape(bias),
                self.shape(x)
            )));
        }
        let bv = self.value(bias).to_vec();
        let value: Vec<f64> = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + bv[i % cols])
            .collect();
        let n = value.len() as u64;
        Ok(self.push(Op::AddBias { x, bias }, self.shape(x).to_vec(), value, n))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value: Vec<f64> = self.value(x).iter().map(|v| v * factor).collect();
        let n = value.len() as u64;
        self.push(Op::Scale { x, factor }, self.shape(x).to_vec(), value, n)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value: Vec<f64> = self.value(x).iter().map(|&v| kernels::relu(v)).collect();
        let n = value.len() as u64;
        self.push(Op::Relu(x), self.shape(x).to_vec(), value, n)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value: Vec<f64> = self.value(x).iter().map(|&v| kernels::sigmoid(v)).collect();
        let n = value.len() as u64;
        self.push(Op::Sigmoid(x), self.shape(x).to_vec(), value, 4 * n)
    }

    /// Inverted dropout. Identity (no node recorded) in evaluation mode or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::param(format!("dropout rate {p} must be in [0, 1)")));
        }
        let Some(rng) = self.dropout_rng.as_mut() else {
            return Ok(x);
        };
        if p == 0.0 {
            return Ok(x);
        }
        let keep_scale = 1.0 / (1.0 - p);
        let n = self.nodes[x.0].value.len();
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random::<f64>() < p {
                    0.0
                } else {
                    keep_scale
                }
            })
            .collect();
        let value: Vec<f64> = self.value(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        Ok(self.push(Op::Dropout { x, mask }, self.shape(x).to_vec(), value, n as u64))
    }

    /// Normalizes the last axis to zero mean, unit (biased) variance, then applies `γ`, `β`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (rows, cols) = rows_cols(self.shape(x));
        if self.value(gamma).len() != cols || self.value(beta).len() != cols {
            return Err(Error::shape(format!(
                "layer norm parameters {:?}/{:?} do not match last axis of {:?}",
                self.shape(gamma),
                self.shape(beta),
                self.shape(x)
            )));
        }
        let xv = self.value(x);
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let mut xhat = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..cols {
                let h = (row[c] - mean) * is;
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * gv[c] + bv[c];
            }
        }
        let flops = 7 * (rows * cols) as u64 + 2 * rows as u64;
        Ok(self.push(
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            self.shape(x).to_vec(),
            out,
            flops,
        ))
    }

    /// Softmax over the last axis, stabilized by row-max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let (_, cols) = rows_cols(self.shape(x));
        let value = kernels::softmax_rows(self.value(x), cols);
        let n = value.len() as u64;
        self.push(Op::Softmax(x), self.shape(x).to_vec(), value, 5 * n)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape(x)
            )));
        }
        let value = self.value(x).to_vec();
        Ok(self.push(Op::Reshape(x), shape.to_vec(), value, 0))
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = rows_cols(self.shape(x));
        if start + len > cols {
            return Err(Error::shape(format!(
                "column slice {start}..{} out of range for {:?}",
                start + len,
                self.shape(x)
            )));
        }
        let xv = self.value(x);
        let mut value = Vec::with_capacity(rows * len);
        for r in 0..rows {
            value.extend_from_slice(&xv[r * cols + start..r * cols + start + len]);
        }
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().expect("rank >= 1") = len;
        Ok(self.push(Op::SliceCols { x, start }, shape, value, 0))
    }

    /// Concatenates along the last axis; leading dimensions must agree.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let lead = self.shape(*first)[..self.shape(*first).len() - 1].to_vec();
        let (rows, _) = rows_cols(self.shape(*first));
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = self.shape(*p);
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(Error::shape(format!(
                    "concat operand {s:?} incompatible with leading dims {lead:?}"
                )));
            }
            widths.push(*s.last().expect("rank >= 1"));
        }
        let total: usize = widths.iter().sum();
        let mut value = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, w) in parts.iter().zip(&widths) {
                value.extend_from_slice(&self.value(*p)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        Ok(self.push(Op::ConcatCols(parts.to_vec()), shape, value, 0))
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let (_, cols) = rows_cols(self.shape(*first));
        let mut rows = 0;
        let mut value = Vec::new();
        for p in parts {
            let (r, c) = rows_cols(self.shape(*p));
            if c != cols {
                return Err(Error::shape(format!(
                    "row concat operand {:?} has {c} columns, expected {cols}",
                    self.shape(*p)
                )));
            }
            rows += r;
            value.extend_from_slice(self.value(*p));
        }
        Ok(self.push(Op::ConcatRows(parts.to_vec()), vec![rows, cols], value, 0))
    }

    /// Selects rows (of the matrix view `[rows, last]`) by index; repeats allowed.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (n, cols) = rows_cols(self.shape(x));
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::shape(format!(
                "row index {bad} out of range for {:?}",
                self.shape(x)
            )));
        }
        let xv = self.value(x);
        let mut value = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            value.extend_from_slice(&xv[r * cols..(r + 1) * cols]);
        }
        Ok(self.push(
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
            vec![rows.len(), cols],
            value,
            0,
        ))
    }

    /// Replaces each row `r` of `x[rows, d]` with the vector `fill[d]` where `mask[r]` is set.
    pub fn fill_rows(&mut self, x: Var, fill: Var, mask: &[bool]) -> Result<Var> {
        let (rows, cols) = rows_cols(self.shape(x));
        if mask.len() != rows || self.value(fill).len() != cols {
            return Err(Error::shape(format!(
                "fill_rows: x {:?}, fill {:?}, mask of {}",
                self.shape(x),
                self.shape(fill),
                mask.len()
            )));
        }
        let mut value = self.value(x).to_vec();
        let fv = self.value(fill).to_vec();
        for (r, &m) in mask.iter().enumerate() {
            if m {
                value[r * cols..(r + 1) * cols].copy_from_slice(&fv);
            }
        }
        Ok(self.push(
            Op::FillRows {
                x,
                fill,
                mask: mask.to_vec(),
            },
            self.shape(x).to_vec(),
            value,
            0,
        ))
    }

    /// Scales each row to unit L2 norm. Rows with norm below [`ZERO_NORM`] become
    /// the first basis vector, receive no gradient, and bump
    /// [`Graph::zero_norm_fallbacks`].
    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let (rows, cols) = rows_cols(self.shape(x));
        let xv = self.value(x);
        let mut norms = vec![0.0; rows];
        let mut value = vec![0.0; rows * cols];
        let mut fallbacks = 0;
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < ZERO_NORM {
                fallbacks += 1;
                if cols > 0 {
                    value[r * cols] = 1.0;
                }
            } else {
                norms[r] = norm;
                for c in 0..cols {
                    value[r * cols + c] = row[c] / norm;
                }
            }
        }
        if fallbacks > 0 {
            log::warn!("{fallbacks} zero-norm rows replaced by e1 during normalization");
        }
        self.zero_norm_fallbacks += fallbacks;
        let flops = 3 * (rows * cols) as u64 + rows as u64;
        self.push(
            Op::L2NormalizeRows { x, norms },
            self.shape(x).to_vec(),
            value,
            flops,
        )
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let n = self.value(x).len() as u64;
        self.push(Op::Sum(x), vec![], vec![s], n)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let s = self.value(x).iter().sum::<f64>() / n.max(1) as f64;
        self.push(Op::Mean(x), vec![], vec![s], n as u64)
    }

    /// Mean binary cross-entropy computed from pre-sigmoid logits.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.len() != targets.len() || targets.is_empty() {
            return Err(Error::shape(format!(
                "{} logits for {} targets",
                lv.len(),
                targets.len()
            )));
        }
        let loss = lv
            .iter()
            .zip(targets)
            .map(|(&x, &y)| kernels::softplus(x) - x * y)
            .sum::<f64>()
            / targets.len() as f64;
        let n = targets.len() as u64;
        Ok(self.push(
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            vec![],
            vec![loss],
            5 * n,
        ))
    }

    /// Mean of [`NceTerm`] values over a square similarity matrix. Zero for no terms.
    pub fn info_nce(&mut self, sim: Var, terms: Vec<NceTerm>, tau: f64) -> Result<Var> {
        if !(tau > 0.0) {
            return Err(Error::param(format!("temperature {tau} must be positive")));
        }
        let n = match self.shape(sim) {
            [r, c] if r == c => *r,
            s => return Err(Error::shape(format!("similarity matrix must be square, got {s:?}"))),
        };
        let sv = self.value(sim);
        let mut probs = Vec::with_capacity(terms.len());
        let mut total = 0.0;
        let mut flops = 0u64;
        for t in &terms {
            if t.anchor >= n || t.positive >= n || t.candidates.iter().any(|&c| c >= n) {
                return Err(Error::contract(format!(
                    "contrastive term {t:?} out of range for {n} embeddings"
                )));
            }
            if t.candidates.is_empty() {
                return Err(Error::contract(format!("contrastive term {t:?} has no candidates")));
            }
            let row = &sv[t.anchor * n..(t.anchor + 1) * n];
            let logits: Vec<f64> = t.candidates.iter().map(|&c| row[c] / tau).collect();
            let lse = kernels::log_sum_exp(&logits);
            total += lse - row[t.positive] / tau;
            probs.push(logits.iter().map(|l| (l - lse).exp()).collect());
            flops += 3 * t.candidates.len() as u64 + 2;
        }
        let loss = if terms.is_empty() {
            0.0
        } else {
            total / terms.len() as f64
        };
        Ok(self.push(
            Op::InfoNce {
                sim,
                terms,
                probs,
                tau,
            },
            vec![],
            vec![loss],
            flops,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        let numels = self.nodes.iter().map(|n| n.value.len()).collect();
        Ok(Gradients { grads, numels })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let input = &self.nodes[v.0];
            if !input.needs_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; input.value.len()]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul {
                a,
                b,
                trans_b,
                batch,
                m,
                k,
                n,
            } => {
                let (m, k, n) = (*m, *k, *n);
                let av = self.value(*a);
                let bv = self.value(*b);
                acc(*a, &mut |ga| {
                    for gi in 0..*batch {
                        let gb = &g[gi * m * n..(gi + 1) * m * n];
                        let bb = &bv[gi * k * n..(gi + 1) * k * n];
                        let out = &mut ga[gi * m * k..(gi + 1) * m * k];
                        if *trans_b {
                            // C = A·Bᵀ, B is [n,k]: dA = dC·B
                            kernels::matmul_nn_acc(gb, bb, out, m, n, k);
                        } else {
                            // dA = dC·Bᵀ
                            kernels::matmul_nt_acc(gb, bb, out, m, n, k);
                        }
                    }
                });
                acc(*b, &mut |gbuf| {
                    for gi in 0..*batch {
                        let gb = &g[gi * m * n..(gi + 1) * m * n];
                        let ab = &av[gi * m * k..(gi + 1) * m * k];
                        let out = &mut gbuf[gi * k * n..(gi + 1) * k * n];
                        if *trans_b {
                            // dB[n,k] = dCᵀ·A
                            kernels::matmul_tn_acc(gb, ab, out, n, m, k);
                        } else {
                            // dB[k,n] = Aᵀ·dC
                            kernels::matmul_tn_acc(ab, gb, out, k, m, n);
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::AddBias { x, bias } => {
                acc(*x, &mut |gx| add_into(gx, g));
                acc(*bias, &mut |gb| {
                    let cols = gb.len();
                    for (i, v) in g.iter().enumerate() {
                        gb[i % cols] += v;
                    }
                });
            }
            Op::Scale { x, factor } => acc(*x, &mut |gx| {
                for (o, v) in gx.iter_mut().zip(g) {
                    *o += v * factor;
                }
            }),
            Op::Relu(x) => {
                let xv = self.value(*x);
                acc(*x, &mut |gx| {
                    for i in 0..g.len() {
                        if xv[i] > 0.0 {
                            gx[i] += g[i];
                        }
                    }
                })
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                acc(*x, &mut |gx| {
                    for i in 0..g.len() {
                        gx[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                })
            }
            Op::Dropout { x, mask } => acc(*x, &mut |gx| {
                for i in 0..g.len() {
                    gx[i] += g[i] * mask[i];
                }
            }),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let cols = self.value(*gamma).len();
                let rows = inv_std.len();
                let gv = self.value(*gamma);
                acc(*x, &mut |gx| {
                    let nf = cols as f64;
                    for r in 0..rows {
                        let gr = &g[r * cols..(r + 1) * cols];
                        let hr = &xhat[r * cols..(r + 1) * cols];
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for c in 0..cols {
                            let dh = gr[c] * gv[c];
                            sum_dh += dh;
                            sum_dh_h += dh * hr[c];
                        }
                        for c in 0..cols {
                            let dh = gr[c] * gv[c];
                            gx[r * cols + c] +=
                                inv_std[r] / nf * (nf * dh - sum_dh - hr[c] * sum_dh_h);
                        }
                    }
                });
                acc(*gamma, &mut |gg| {
                    for (i, v) in g.iter().enumerate() {
                        gg[i % cols] += v * xhat[i];
                    }
                });
                acc(*beta, &mut |gb| {
                    for (i, v) in g.iter().enumerate() {
                        gb[i % cols] += v;
                    }
                });
            }
            Op::Softmax(x) => {
                let (rows, cols) = rows_cols(&node.shape);
                let y = &node.value;
                acc(*x, &mut |gx| {
                    for r in 0..rows {
                        let s = r * cols;
                        let dot: f64 = (s..s + cols).map(|i| g[i] * y[i]).sum();
                        for i in s..s + cols {
                            gx[i] += y[i] * (g[i] - dot);
                        }
                    }
                })
            }
            Op::Reshape(x) => acc(*x, &mut |gx| add_into(gx, g)),
            Op::SliceCols { x, start } => {
                let (rows, len) = rows_cols(&node.shape);
                let (_, cols) = rows_cols(self.shape(*x));
                acc(*x, &mut |gx| {
                    for r in 0..rows {
                        for c in 0..len {
                            gx[r * cols + start + c] += g[r * len + c];
                        }
                    }
                })
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = rows_cols(&node.shape);
                let mut offset = 0;
                for p in parts {
                    let (_, w) = rows_cols(self.shape(*p));
                    acc(*p, &mut |gp| {
                        for r in 0..rows {
                            for c in 0..w {
                                gp[r * w + c] += g[r * total + offset + c];
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    acc(*p, &mut |gp| add_into(gp, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::GatherRows { x, rows } => {
                let (_, cols) = rows_cols(&node.shape);
                acc(*x, &mut |gx| {
                    for (i, &r) in rows.iter().enumerate() {
                        add_into(&mut gx[r * cols..(r + 1) * cols], &g[i * cols..(i + 1) * cols]);
                    }
                })
            }
            Op::FillRows { x, fill, mask } => {
                let (_, cols) = rows_cols(&node.shape);
                acc(*x, &mut |gx| {
                    for (r, &m) in mask.iter().enumerate() {
                        if !m {
                            add_into(&mut gx[r * cols..(r + 1) * cols], &g[r * cols..(r + 1) * cols]);
                        }
                    }
                });
                acc(*fill, &mut |gf| {
                    for (r, &m) in mask.iter().enumerate() {
                        if m {
                            add_into(gf, &g[r * cols..(r + 1) * cols]);
                        }
                    }
                });
            }
            Op::L2NormalizeRows { x, norms } => {
                let (rows, cols) = rows_cols(&node.shape);
                let y = &node.value;
                acc(*x, &mut |gx| {
                    for r in 0..rows {
                        if norms[r] == 0.0 {
                            continue;
                        }
                        let s = r * cols;
                        let dot: f64 = (s..s + cols).map(|i| g[i] * y[i]).sum();
                        for i in s..s + cols {
                            gx[i] += (g[i] - y[i] * dot) / norms[r];
                        }
                    }
                })
            }
            Op::Sum(x) => acc(*x, &mut |gx| gx.iter_mut().for_each(|v| *v += g[0])),
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                acc(*x, &mut |gx| gx.iter_mut().for_each(|v| *v += g[0] / n))
            }
            Op::BceWithLogits { logits, targets } => {
                let lv = self.value(*logits);
                let n = targets.len() as f64;
                acc(*logits, &mut |gl| {
                    for i in 0..targets.len() {
                        gl[i] += g[0] * (kernels::sigmoid(lv[i]) - targets[i]) / n;
                    }
                })
            }
            Op::InfoNce {
                sim,
                terms,
                probs,
                tau,
            } => {
                if terms.is_empty() {
                    return;
                }
                let n = self.shape(*sim)[0];
                let w = g[0] / (terms.len() as f64 * tau);
                acc(*sim, &mut |gs| {
                    for (t, p) in terms.iter().zip(probs) {
                        let row = &mut gs[t.anchor * n..(t.anchor + 1) * n];
                        row[t.positive] -= w;
                        for (&c, &pc) in t.candidates.iter().zip(p) {
                            row[c] += w * pc;
                        }
                    }
                })
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    numels: Vec<usize>,
}

impl Gradients {
    /// `d(loss)/d(v)`, or `None` if `v` did not participate.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// `d(loss)/d(v)`, zeros if `v` did not participate.
    pub fn wrt(&self, v: Var) -> Vec<f64> {
        self.get(v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; self.numels[v.0]])
    }

    /// Stores `d(loss)/d(v)` into `t.grad`.
    pub fn write_into(&self, v: Var, t: &mut Tensor) {
        t.grad = Some(self.wrt(v));
    }
}
