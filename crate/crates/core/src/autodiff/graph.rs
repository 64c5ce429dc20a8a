//! The Wengert tape: forward ops append records, backward replays them.

use super::tensor::Tensor;
use crate::error::{MwError, Result};

/// Handle to a tensor recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

/// Elementwise nonlinearities supported by [`Graph::apply_unary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryFn {
    Sigmoid,
    Tanh,
}

impl UnaryFn {
    fn eval(self, x: f64) -> f64 {
        match self {
            UnaryFn::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            UnaryFn::Tanh => x.tanh(),
        }
    }

    /// Derivative at the forward input, expressed through the forward
    /// output `y` (exact for both functions: σ' = y(1-y), tanh' = 1-y²).
    fn deriv_from_output(self, y: f64) -> f64 {
        match self {
            UnaryFn::Sigmoid => y * (1.0 - y),
            UnaryFn::Tanh => 1.0 - y * y,
        }
    }
}

/// One recorded operation; inputs are ids of earlier records.
#[derive(Debug)]
enum OpKind {
    /// Leaf introduced by [`Graph::input`] or [`Graph::param`].
    Leaf,
    Matmul {
        a: TensorId,
        b: TensorId,
    },
    Transpose {
        a: TensorId,
    },
    Hadamard {
        a: TensorId,
        b: TensorId,
    },
    Add {
        a: TensorId,
        b: TensorId,
    },
    Scale {
        a: TensorId,
        factor: f64,
    },
    ConcatCols {
        a: TensorId,
        b: TensorId,
        a_cols: usize,
    },
    Unary {
        a: TensorId,
        f: UnaryFn,
    },
    /// Fused row-softmax + mean cross-entropy against integer labels.
    /// The probabilities are cached at forward time for the backward rule
    /// `(probs - one_hot) / m`.
    SoftmaxXent {
        logits: TensorId,
        labels: Vec<u8>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    op: OpKind,
    out: Tensor,
}

/// A dynamic computation tape over [`Tensor`] values.
///
/// Records grow append-only; [`Graph::backward`] walks them once in exact
/// reverse order. An output requires gradients whenever any of its inputs
/// does, so frozen subgraphs cost nothing at backward time.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    /// Number of recorded tensors.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a non-trainable leaf (e.g. a data batch), taking ownership.
    pub fn input(&mut self, t: Tensor) -> TensorId {
        self.push(OpKind::Leaf, t.detached())
    }

    /// Records a trainable leaf by cloning the parameter's current values.
    /// The returned id is where [`Graph::backward`] accumulates gradients.
    pub fn param(&mut self, t: &Tensor) -> TensorId {
        let p = Tensor::from_vec(t.rows(), t.cols(), t.data().to_vec())
            .expect("shape is consistent by construction")
            .with_grad();
        self.push(OpKind::Leaf, p)
    }

    /// Borrow the forward value of a recorded tensor.
    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].out
    }

    /// Gradient of the most recent backward pass for `id`; `None` when the
    /// tensor does not require gradients.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].out.grad()
    }

    /// Resets every gradient buffer on the tape to zero.
    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.out.zero_grad();
        }
    }

    fn push(&mut self, op: OpKind, out: Tensor) -> TensorId {
        self.nodes.push(Node { op, out });
        TensorId(self.nodes.len() - 1)
    }

    fn val(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].out
    }

    /// Marks an op output trainable when any input is.
    fn carry_grad(&self, inputs: &[TensorId], t: Tensor) -> Tensor {
        if inputs.iter().any(|id| self.val(*id).requires_grad()) {
            t.with_grad()
        } else {
            t
        }
    }

    /// Matrix product `A · B`; `A.cols` must equal `B.rows`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ar, ac) = self.val(a).shape();
        let (br, bc) = self.val(b).shape();
        if ac != br {
            return Err(MwError::dim(
                "matmul",
                format!("lhs {}x{} is incompatible with rhs {}x{}", ar, ac, br, bc),
            ));
        }
        let out = matmul_vals(self.val(a), self.val(b));
        let out = self.carry_grad(&[a, b], out);
        Ok(self.push(OpKind::Matmul { a, b }, out))
    }

    /// Matrix transpose.
    pub fn transpose(&mut self, a: TensorId) -> TensorId {
        let out = transpose_vals(self.val(a));
        let out = self.carry_grad(&[a], out);
        self.push(OpKind::Transpose { a }, out)
    }

    /// Elementwise product of two same-shape matrices.
    pub fn hadamard(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check_same_shape("hadamard", a, b)?;
        let data = self
            .val(a)
            .data()
            .iter()
            .zip(self.val(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let (r, c) = self.val(a).shape();
        let out = Tensor::from_vec(r, c, data)?;
        let out = self.carry_grad(&[a, b], out);
        Ok(self.push(OpKind::Hadamard { a, b }, out))
    }

    /// Elementwise sum of two same-shape matrices.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check_same_shape("add", a, b)?;
        let data = self
            .val(a)
            .data()
            .iter()
            .zip(self.val(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let (r, c) = self.val(a).shape();
        let out = Tensor::from_vec(r, c, data)?;
        let out = self.carry_grad(&[a, b], out);
        Ok(self.push(OpKind::Add { a, b }, out))
    }

    /// Multiplies every entry by a constant.
    pub fn scale(&mut self, a: TensorId, factor: f64) -> TensorId {
        let (r, c) = self.val(a).shape();
        let data = self.val(a).data().iter().map(|x| x * factor).collect();
        let out = Tensor::from_vec(r, c, data).expect("shape preserved");
        let out = self.carry_grad(&[a], out);
        self.push(OpKind::Scale { a, factor }, out)
    }

    /// Horizontal concatenation `[A | B]`; row counts must match.
    pub fn concat_cols(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ar, ac) = self.val(a).shape();
        let (br, bc) = self.val(b).shape();
        if ar != br {
            return Err(MwError::dim(
                "concat_cols",
                format!("lhs {}x{} and rhs {}x{} differ in rows", ar, ac, br, bc),
            ));
        }
        let mut data = Vec::with_capacity(ar * (ac + bc));
        for r in 0..ar {
            data.extend_from_slice(self.val(a).row(r));
            data.extend_from_slice(self.val(b).row(r));
        }
        let out = Tensor::from_vec(ar, ac + bc, data)?;
        let out = self.carry_grad(&[a, b], out);
        Ok(self.push(OpKind::ConcatCols { a, b, a_cols: ac }, out))
    }

    /// Applies `sigmoid` or `tanh` entrywise.
    pub fn apply_unary(&mut self, a: TensorId, f: UnaryFn) -> TensorId {
        let (r, c) = self.val(a).shape();
        let data = self.val(a).data().iter().map(|x| f.eval(*x)).collect();
        let out = Tensor::from_vec(r, c, data).expect("shape preserved");
        let out = self.carry_grad(&[a], out);
        self.push(OpKind::Unary { a, f }, out)
    }

    /// Shorthand for [`Graph::apply_unary`] with [`UnaryFn::Sigmoid`].
    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        self.apply_unary(a, UnaryFn::Sigmoid)
    }

    /// Shorthand for [`Graph::apply_unary`] with [`UnaryFn::Tanh`].
    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        self.apply_unary(a, UnaryFn::Tanh)
    }

    /// Row-stable softmax fused with mean cross-entropy.
    ///
    /// Returns the scalar loss id plus the detached probability matrix.
    /// The softmax subtracts each row's maximum before exponentiating, and
    /// the log-probability of the true class is computed in log-sum-exp
    /// form, so no intermediate overflows for finite logits.
    pub fn softmax_xent(&mut self, logits: TensorId, labels: &[u8]) -> Result<(TensorId, Tensor)> {
        let (m, k) = self.val(logits).shape();
        if m == 0 || k == 0 {
            return Err(MwError::Data(format!(
                "softmax_xent needs a non-empty logit matrix, got {}x{}",
                m, k
            )));
        }
        if labels.len() != m {
            return Err(MwError::dim(
                "softmax_xent",
                format!("{} labels for {} logit rows", labels.len(), m),
            ));
        }
        if let Some(bad) = labels.iter().find(|&&y| (y as usize) >= k) {
            return Err(MwError::Data(format!(
                "label {} out of range for {} classes",
                bad, k
            )));
        }

        let probs = softmax_rows(self.val(logits));
        let mut total = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = self.val(logits).row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let log_sum: f64 = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            // log p_y = (x_y - max) - log Σ exp(x - max)
            total += (row[y as usize] - max) - log_sum;
        }
        let loss_val = -total / m as f64;

        let out = Tensor::from_vec(1, 1, vec![loss_val])?;
        let out = self.carry_grad(&[logits], out);
        let id = self.push(
            OpKind::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs: probs.data().to_vec(),
            },
            out,
        );
        Ok((id, probs))
    }

    /// Reverse pass from a scalar: seeds `d loss/d loss = 1`, then replays
    /// the tape once in exact reverse recording order, propagating into
    /// every reachable tensor that requires gradients. Each call works in
    /// its own scratch space and finally adds the result into the
    /// persistent gradient buffers, so buffers accumulate additively
    /// across calls; the caller resets via [`Graph::zero_grads`].
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.val(loss).shape() != (1, 1) {
            let (r, c) = self.val(loss).shape();
            return Err(MwError::Usage(format!(
                "backward needs a 1x1 scalar, got {}x{}",
                r, c
            )));
        }
        if !self.val(loss).requires_grad() {
            // Nothing on the tape is trainable; there is nothing to do.
            return Ok(());
        }

        // This pass's running gradients, one optional slot per record.
        let mut scratch: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        scratch[loss.0] = Some(vec![1.0]);

        fn add_into(slot: &mut Option<Vec<f64>>, contrib: &[f64]) {
            match slot {
                Some(acc) => {
                    debug_assert_eq!(acc.len(), contrib.len());
                    for (a, c) in acc.iter_mut().zip(contrib) {
                        *a += c;
                    }
                }
                None => *slot = Some(contrib.to_vec()),
            }
        }
        // Contributions flow only into trainable inputs.
        macro_rules! flow {
            ($self:ident, $scratch:ident, $id:expr, $contrib:expr) => {
                if $self.val($id).requires_grad() {
                    add_into(&mut $scratch[$id.0], $contrib);
                }
            };
        }

        for i in (0..=loss.0).rev() {
            if !self.val(TensorId(i)).requires_grad() {
                continue;
            }
            let Some(g) = scratch[i].clone() else {
                continue;
            };
            match &self.nodes[i].op {
                OpKind::Leaf => {}
                OpKind::Matmul { a, b } => {
                    let (a, b) = (*a, *b);
                    let (m, _k) = self.val(a).shape();
                    let (_, n) = self.val(b).shape();
                    let gt = Tensor::from_vec(m, n, g)?;
                    // dA += G · Bᵀ, dB += Aᵀ · G
                    let da = matmul_vals(&gt, &transpose_vals(self.val(b)));
                    let db = matmul_vals(&transpose_vals(self.val(a)), &gt);
                    flow!(self, scratch, a, da.data());
                    flow!(self, scratch, b, db.data());
                }
                OpKind::Transpose { a } => {
                    let a = *a;
                    let (r, c) = self.val(TensorId(i)).shape();
                    let gt = Tensor::from_vec(r, c, g)?;
                    let da = transpose_vals(&gt);
                    flow!(self, scratch, a, da.data());
                }
                OpKind::Hadamard { a, b } => {
                    let (a, b) = (*a, *b);
                    let da: Vec<f64> = g.iter().zip(self.val(b).data()).map(|(g, y)| g * y).collect();
                    let db: Vec<f64> = g.iter().zip(self.val(a).data()).map(|(g, x)| g * x).collect();
                    flow!(self, scratch, a, &da);
                    flow!(self, scratch, b, &db);
                }
                OpKind::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    flow!(self, scratch, a, &g);
                    flow!(self, scratch, b, &g);
                }
                OpKind::Scale { a, factor } => {
                    let (a, factor) = (*a, *factor);
                    let da: Vec<f64> = g.iter().map(|g| g * factor).collect();
                    flow!(self, scratch, a, &da);
                }
                OpKind::ConcatCols { a, b, a_cols } => {
                    let (a, b, a_cols) = (*a, *b, *a_cols);
                    let rows = self.val(a).rows();
                    let b_cols = self.val(b).cols();
                    let total = a_cols + b_cols;
                    let mut da = Vec::with_capacity(rows * a_cols);
                    let mut db = Vec::with_capacity(rows * b_cols);
                    for r in 0..rows {
                        da.extend_from_slice(&g[r * total..r * total + a_cols]);
                        db.extend_from_slice(&g[r * total + a_cols..(r + 1) * total]);
                    }
                    flow!(self, scratch, a, &da);
                    flow!(self, scratch, b, &db);
                }
                OpKind::Unary { a, f } => {
                    let (a, f) = (*a, *f);
                    let da: Vec<f64> = g
                        .iter()
                        .zip(self.val(TensorId(i)).data())
                        .map(|(g, y)| g * f.deriv_from_output(*y))
                        .collect();
                    flow!(self, scratch, a, &da);
                }
                OpKind::SoftmaxXent { logits, labels, probs } => {
                    let logits = *logits;
                    let upstream = g[0];
                    let m = labels.len();
                    let k = self.val(logits).cols();
                    let mut da = probs.clone();
                    for (r, &y) in labels.iter().enumerate() {
                        da[r * k + y as usize] -= 1.0;
                    }
                    let scale = upstream / m as f64;
                    da.iter_mut().for_each(|v| *v *= scale);
                    flow!(self, scratch, logits, &da);
                }
            }
        }

        // Fold this pass's results into the persistent buffers.
        for (node, slot) in self.nodes.iter_mut().zip(&scratch) {
            if let Some(s) = slot {
                node.out.accumulate_grad(s);
            }
        }
        Ok(())
    }

    fn check_same_shape(&self, op: &str, a: TensorId, b: TensorId) -> Result<()> {
        let (ar, ac) = self.val(a).shape();
        let (br, bc) = self.val(b).shape();
        if (ar, ac) != (br, bc) {
            return Err(MwError::dim(
                op,
                format!("lhs {}x{} vs rhs {}x{}", ar, ac, br, bc),
            ));
        }
        Ok(())
    }
}

/// Plain-value matrix product used by forward and backward rules.
/// The inner accumulation always runs in increasing `k`, which keeps the
/// result deterministic for a fixed operand pair.
fn matmul_vals(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, kk) = a.shape();
    let n = b.cols();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for k in 0..kk {
            let aik = a.get(i, k);
            let brow = b.row(k);
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += aik * brow[j];
            }
        }
    }
    Tensor::from_vec(m, n, out).expect("product shape is consistent")
}

fn transpose_vals(a: &Tensor) -> Tensor {
    let (r, c) = a.shape();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a.get(i, j);
        }
    }
    Tensor::from_vec(c, r, out).expect("transpose shape is consistent")
}

/// Row-wise numerically stable softmax of a plain value (no tape record).
/// Used to materialise class probabilities on inference paths.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let (m, k) = logits.shape();
    let mut out = vec![0.0; m * k];
    for r in 0..m {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (j, e) in exps.iter().enumerate() {
            out[r * k + j] = e / sum;
        }
    }
    Tensor::from_vec(m, k, out).expect("softmax preserves shape")
}
