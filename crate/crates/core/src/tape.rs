//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Operations are recorded in execution order on a [`Tape`]; each returns a
//! [`Var`] handle (an index into the tape). Parents always precede children,
//! so [`Tape::backward`] is a single reverse sweep.
//!
//! ```
//! use mat::tape::Tape;
//! use mat::tensor::Tensor;
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::new([3], vec![1.0, -2.0, 0.5]).unwrap(), true);
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0, 1.0]);
//! ```

use std::fmt;

use crate::error::{MatError, Result};
use crate::tensor::{gemm, sc, transpose, Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Kinds of recorded operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Transpose,
    Add,
    AddRow,
    Mul,
    Scale,
    Relu,
    SoftmaxRows,
    ConcatCols,
    ConcatRows,
    Mean,
    LayerNorm,
    Sum,
    Gather,
    SmoothedNll,
}

impl OpKind {
    pub const ALL: [OpKind; 16] = [
        OpKind::Leaf,
        OpKind::MatMul,
        OpKind::Transpose,
        OpKind::Add,
        OpKind::AddRow,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::Relu,
        OpKind::SoftmaxRows,
        OpKind::ConcatCols,
        OpKind::ConcatRows,
        OpKind::Mean,
        OpKind::LayerNorm,
        OpKind::Sum,
        OpKind::Gather,
        OpKind::SmoothedNll,
    ];
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl std::str::FromStr for OpKind {
    type Err = MatError;

    /// Case-insensitive variant name, e.g. `softmaxrows` or `MatMul`.
    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| MatError::config(format!("unknown op kind `{s}`")))
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Mean(Vec<Var>),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Sum(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SmoothedNll {
        logits: Var,
        /// Per-row target id; `None` rows are padding.
        targets: Vec<Option<usize>>,
        eps: T,
        probs: Vec<T>,
        count: usize,
    },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Transpose(..) => OpKind::Transpose,
            Op::Add(..) => OpKind::Add,
            Op::AddRow(..) => OpKind::AddRow,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Relu(..) => OpKind::Relu,
            Op::SoftmaxRows(..) => OpKind::SoftmaxRows,
            Op::ConcatCols(..) => OpKind::ConcatCols,
            Op::ConcatRows(..) => OpKind::ConcatRows,
            Op::Mean(..) => OpKind::Mean,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Sum(..) => OpKind::Sum,
            Op::Gather { .. } => OpKind::Gather,
            Op::SmoothedNll { .. } => OpKind::SmoothedNll,
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Variance epsilon inside the layer-norm square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    fault: Option<OpKind>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            fault: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`. Vars created after
    /// that point become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    /// Test hook: perturbs the backward rule of one op kind so that gradient
    /// checks can prove they detect a broken derivative.
    pub fn inject_backward_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives gradient (masks, positional tables).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Result<Var> {
        let kind = op.kind();
        if let Some(index) = value.first_non_finite() {
            return Err(MatError::NonFinite {
                op: kind_name(kind),
                index,
            });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> MatError {
        MatError::Shape {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(MatError::Shape {
                op,
                lhs: s.to_vec(),
                rhs: vec![],
            });
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(self.shape_err("matmul", a, b));
        }
        let data = gemm(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new([m, n], data)?;
        self.push(value, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims(a, "transpose")?;
        let value = Tensor::new([n, m], transpose(self.value(a).data(), m, n))?;
        self.push(value, Op::Transpose(a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err("add", a, b));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| *x + *y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        self.push(value, Op::Add(a, b), &[a, b])
    }

    /// Adds a length-`n` vector to every row of an `..×n` tensor.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let n = self.value(a).cols();
        if self.shape(row) != [n] {
            return Err(self.shape_err("add_row", a, row));
        }
        let (va, vr) = (self.value(a), self.value(row).data());
        let data = va
            .data()
            .chunks(n)
            .flat_map(|r| r.iter().zip(vr).map(|(x, y)| *x + *y))
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        self.push(value, Op::AddRow(a, row), &[a, row])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err("mul", a, b));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| *x * *y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        self.push(value, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let value = self.value(a).map(|x| x * c);
        self.push(value, Op::Scale(a, c), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(value, Op::Relu(a), &[a])
    }

    /// Row-wise softmax over the last dimension, max-shifted.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let n = va.cols();
        let mut data = Vec::with_capacity(va.len());
        for row in va.data().chunks(n) {
            data.extend(softmax(row));
        }
        let value = Tensor::new(va.shape().to_vec(), data)?;
        self.push(value, Op::SoftmaxRows(a), &[a])
    }

    /// Concatenates matrices along the last dimension.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| MatError::contract("concat of zero tensors"))?;
        let rows = self.value(first).rows();
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        for &p in parts {
            if self.shape(p)[..self.shape(p).len() - 1] != lead[..] {
                return Err(self.shape_err("concat_cols", first, p));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(shape, data)?;
        self.push(value, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| MatError::contract("concat of zero tensors"))?;
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        for &p in parts {
            if self.shape(p).len() != 2 || self.value(p).cols() != cols {
                return Err(self.shape_err("concat_rows", first, p));
            }
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new([data.len() / cols, cols], data)?;
        self.push(value, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Arithmetic mean of equally shaped tensors.
    ///
    /// Evaluated as the running mean `m += (x_k - m) / k`, which returns the
    /// common value exactly when all inputs coincide.
    pub fn mean(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| MatError::contract("mean over an empty list"))?;
        for &p in parts {
            if self.shape(p) != self.shape(first) {
                return Err(self.shape_err("mean", first, p));
            }
        }
        let mut acc = self.value(first).clone();
        for (k, &p) in parts.iter().enumerate().skip(1) {
            let kk = T::from_usize(k + 1).unwrap();
            for (m, x) in acc.data_mut().iter_mut().zip(self.nodes[p.0].value.data()) {
                *m = *m + (*x - *m) / kk;
            }
        }
        self.push(acc, Op::Mean(parts.to_vec()), parts)
    }

    /// Layer normalization over the last dimension with affine gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let d = self.value(x).cols();
        if self.shape(gain) != [d] {
            return Err(self.shape_err("layer_norm", x, gain));
        }
        if self.shape(bias) != [d] {
            return Err(self.shape_err("layer_norm", x, bias));
        }
        let eps = sc::<T>(LAYER_NORM_EPS);
        let dn = T::from_usize(d).unwrap();
        let (vx, g, b) = (self.value(x), self.value(gain).data(), self.value(bias).data());
        let mut xhat = Vec::with_capacity(vx.len());
        let mut rstd = Vec::with_capacity(vx.rows());
        let mut out = Vec::with_capacity(vx.len());
        for row in vx.data().chunks(d) {
            let mean = row.iter().fold(T::zero(), |s, &v| s + v) / dn;
            let var = row
                .iter()
                .fold(T::zero(), |s, &v| s + (v - mean) * (v - mean))
                / dn;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let value = Tensor::new(vx.shape().to_vec(), out)?;
        self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        )
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().fold(T::zero(), |s, &v| s + v);
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Row lookup: output row `i` is `table[ids[i]]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, d) = self.matrix_dims(table, "gather_rows")?;
        if ids.is_empty() {
            return Err(MatError::contract("gather of zero rows"));
        }
        let t = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * d);
        for (pos, &id) in ids.iter().enumerate() {
            if id >= vocab {
                return Err(MatError::Input {
                    position: pos,
                    message: format!("id {id} out of range for table of {vocab} rows"),
                });
            }
            data.extend_from_slice(t.row(id));
        }
        let value = Tensor::new([ids.len(), d], data)?;
        self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    /// Mean label-smoothed cross-entropy over non-padding rows.
    ///
    /// Each row's target distribution puts `1 - eps` on the gold id and spreads
    /// `eps` uniformly over the vocabulary. `targets[r] == None` marks padding.
    pub fn smoothed_nll(
        &mut self,
        logits: Var,
        targets: &[Option<usize>],
        eps: f64,
    ) -> Result<Var> {
        let (rows, vocab) = self.matrix_dims(logits, "smoothed_nll")?;
        if targets.len() != rows {
            return Err(MatError::Shape {
                op: "smoothed_nll",
                lhs: vec![rows, vocab],
                rhs: vec![targets.len()],
            });
        }
        let count = targets.iter().flatten().count();
        if count == 0 {
            return Err(MatError::contract("loss over a batch with no non-pad targets"));
        }
        if let Some((pos, &Some(t))) = targets
            .iter()
            .enumerate()
            .find(|(_, t)| matches!(t, Some(t) if *t >= vocab))
        {
            return Err(MatError::Input {
                position: pos,
                message: format!("target {t} out of range for vocabulary {vocab}"),
            });
        }
        let eps_t = sc::<T>(eps);
        let vn = T::from_usize(vocab).unwrap();
        let v = self.value(logits);
        let mut probs = Vec::with_capacity(v.len());
        let mut total = T::zero();
        for (r, row) in v.data().chunks(vocab).enumerate() {
            let p = softmax(row);
            if let Some(t) = targets[r] {
                let mx = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
                let lse = mx + row.iter().fold(T::zero(), |s, &x| s + (x - mx).exp()).ln();
                let nll = lse - row[t];
                let mean_logit = row.iter().fold(T::zero(), |s, &x| s + x) / vn;
                let smooth = lse - mean_logit;
                total = total + (T::one() - eps_t) * nll + eps_t * smooth;
            }
            probs.extend(p);
        }
        let loss = total / T::from_usize(count).unwrap();
        self.push(
            Tensor::scalar(loss),
            Op::SmoothedNll {
                logits,
                targets: targets.to_vec(),
                eps: eps_t,
                probs,
                count,
            },
            &[logits],
        )
    }

    /// Gradients of a one-element `loss` with respect to every recorded value.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(MatError::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let g = if self.fault == Some(node.op.kind()) {
                g.iter().map(|&x| x * sc(1.25)).collect()
            } else {
                g
            };
            self.backprop_node(node, &g, &mut grads);
            grads[id] = Some(g);
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| {
                if !node.requires_grad {
                    return None;
                }
                let shape = node.value.shape().to_vec();
                Some(match g {
                    Some(data) => Tensor::new(shape, data).expect("gradient shape"),
                    None => Tensor::zeros(shape),
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let acc = |grads: &mut [Option<Vec<T>>], v: Var, delta: &[T]| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing
                    .iter_mut()
                    .zip(delta)
                    .for_each(|(e, d)| *e = *e + *d),
                slot @ None => *slot = Some(delta.to_vec()),
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if self.nodes[a.0].requires_grad {
                    let bt = transpose(vb.data(), k, n);
                    acc(grads, *a, &gemm(g, &bt, m, n, k));
                }
                if self.nodes[b.0].requires_grad {
                    let at = transpose(va.data(), m, k);
                    acc(grads, *b, &gemm(&at, g, k, m, n));
                }
            }
            Op::Transpose(a) => {
                let s = node.value.shape();
                acc(grads, *a, &transpose(g, s[0], s[1]));
            }
            Op::Add(a, b) => {
                acc(grads, *a, g);
                acc(grads, *b, g);
            }
            Op::AddRow(a, row) => {
                acc(grads, *a, g);
                let n = node.value.cols();
                let mut gr = vec![T::zero(); n];
                for chunk in g.chunks(n) {
                    gr.iter_mut().zip(chunk).for_each(|(s, x)| *s = *s + *x);
                }
                acc(grads, *row, &gr);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let ga: Vec<T> = g.iter().zip(vb).map(|(x, y)| *x * *y).collect();
                let gb: Vec<T> = g.iter().zip(va).map(|(x, y)| *x * *y).collect();
                acc(grads, *a, &ga);
                acc(grads, *b, &gb);
            }
            Op::Scale(a, c) => {
                let ga: Vec<T> = g.iter().map(|x| *x * *c).collect();
                acc(grads, *a, &ga);
            }
            Op::Relu(a) => {
                let va = self.value(*a).data();
                let ga: Vec<T> = g
                    .iter()
                    .zip(va)
                    .map(|(x, v)| if *v > T::zero() { *x } else { T::zero() })
                    .collect();
                acc(grads, *a, &ga);
            }
            Op::SoftmaxRows(a) => {
                let n = node.value.cols();
                let y = node.value.data();
                let mut ga = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks(n).zip(g.chunks(n)) {
                    let dot = yr.iter().zip(gr).fold(T::zero(), |s, (p, q)| s + *p * *q);
                    ga.extend(yr.iter().zip(gr).map(|(p, q)| *p * (*q - dot)));
                }
                acc(grads, *a, &ga);
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let gp: Vec<T> = g
                        .chunks(total)
                        .flat_map(|row| row[offset..offset + w].iter().copied())
                        .collect();
                    acc(grads, p, &gp);
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    acc(grads, p, &g[offset..offset + len]);
                    offset += len;
                }
            }
            Op::Mean(parts) => {
                let inv = T::one() / T::from_usize(parts.len()).unwrap();
                let gp: Vec<T> = g.iter().map(|x| *x * inv).collect();
                for &p in parts {
                    acc(grads, p, &gp);
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = node.value.cols();
                let dn = T::from_usize(d).unwrap();
                let gv = self.value(*gain).data();
                let mut gx = Vec::with_capacity(g.len());
                let mut ggain = vec![T::zero(); d];
                let mut gbias = vec![T::zero(); d];
                for (r, (gr, hr)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                    let mut mean_dh = T::zero();
                    let mut mean_dh_h = T::zero();
                    for j in 0..d {
                        let dh = gr[j] * gv[j];
                        mean_dh = mean_dh + dh;
                        mean_dh_h = mean_dh_h + dh * hr[j];
                        ggain[j] = ggain[j] + gr[j] * hr[j];
                        gbias[j] = gbias[j] + gr[j];
                    }
                    mean_dh = mean_dh / dn;
                    mean_dh_h = mean_dh_h / dn;
                    for j in 0..d {
                        let dh = gr[j] * gv[j];
                        gx.push(rstd[r] * (dh - mean_dh - hr[j] * mean_dh_h));
                    }
                }
                acc(grads, *x, &gx);
                acc(grads, *gain, &ggain);
                acc(grads, *bias, &gbias);
            }
            Op::Sum(a) => {
                let ga = vec![g[0]; self.value(*a).len()];
                acc(grads, *a, &ga);
            }
            Op::Gather { table, ids } => {
                if self.nodes[table.0].requires_grad {
                    let t = self.value(*table);
                    let d = t.cols();
                    let mut gt = vec![T::zero(); t.len()];
                    for (i, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            gt[id * d + j] = gt[id * d + j] + g[i * d + j];
                        }
                    }
                    acc(grads, *table, &gt);
                }
            }
            Op::SmoothedNll {
                logits,
                targets,
                eps,
                probs,
                count,
            } => {
                let vocab = self.value(*logits).cols();
                let scale = g[0] / T::from_usize(*count).unwrap();
                let uniform = *eps / T::from_usize(vocab).unwrap();
                let mut gl = vec![T::zero(); probs.len()];
                for (r, t) in targets.iter().enumerate() {
                    let Some(t) = *t else { continue };
                    for j in 0..vocab {
                        let mut q = uniform;
                        if j == t {
                            q = q + T::one() - *eps;
                        }
                        gl[r * vocab + j] = (probs[r * vocab + j] - q) * scale;
                    }
                }
                acc(grads, *logits, &gl);
            }
        }
    }
}

fn kind_name(kind: OpKind) -> &'static str {
    match kind {
        OpKind::Leaf => "leaf",
        OpKind::MatMul => "matmul",
        OpKind::Transpose => "transpose",
        OpKind::Add => "add",
        OpKind::AddRow => "add_row",
        OpKind::Mul => "mul",
        OpKind::Scale => "scale",
        OpKind::Relu => "relu",
        OpKind::SoftmaxRows => "softmax_rows",
        OpKind::ConcatCols => "concat_cols",
        OpKind::ConcatRows => "concat_rows",
        OpKind::Mean => "mean",
        OpKind::LayerNorm => "layer_norm",
        OpKind::Sum => "sum",
        OpKind::Gather => "gather_rows",
        OpKind::SmoothedNll => "smoothed_nll",
    }
}

pub(crate) fn softmax<T: Scalar>(row: &[T]) -> Vec<T> {
    let mx = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let exps: Vec<T> = row.iter().map(|&x| (x - mx).exp()).collect();
    let z = exps.iter().fold(T::zero(), |s, &e| s + e);
    exps.into_iter().map(|e| e / z).collect()
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `v`, or `None` if `v` does not require grad.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn triple_loop(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a.at(i, p) * b.at(p, j);
                }
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_permutation() {
        let mut tape = Tape::new();
        let i2 = tape.constant(Tensor::eye(2));
        let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let p = tape.constant(t(&[2, 2], &[0.0, 1.0, 1.0, 0.0]));
        let ia = tape.matmul(i2, a).unwrap();
        assert_eq!(tape.value(ia).data(), &[1.0, 2.0, 3.0, 4.0]);
        let ap = tape.matmul(a, p).unwrap();
        assert_eq!(tape.value(ap).data(), &[2.0, 1.0, 4.0, 3.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = Tensor::from_fn([3, 4], |i| ((i * 7 + 3) % 11) as f64 / 3.0 - 1.7);
        let b = Tensor::from_fn([4, 2], |i| ((i * 5 + 1) % 13) as f64 / 5.0 - 1.1);
        let mut tape = Tape::new();
        let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let c = tape.matmul(va, vb).unwrap();
        let oracle = triple_loop(&a, &b);
        for (x, y) in tape.value(c).data().iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros([2, 3]));
        let b = tape.constant(Tensor::zeros([2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3, 2], &[0.0, 0.0, 0.0, 3f64.ln(), 1000.0, 1001.0]));
        let y = tape.softmax_rows(x).unwrap();
        let y = tape.value(y).data().to_vec();
        assert_eq!(&y[0..2], &[0.5, 0.5]);
        assert!((y[2] - 0.25).abs() < 1e-15 && (y[3] - 0.75).abs() < 1e-15);
        let reference = softmax(&[0.0f64, 1.0]);
        assert_eq!(&y[4..6], &reference[..]);
    }

    #[test]
    fn relu_concat_mean() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3], &[-1.0, 0.0, 2.0]));
        let r = tape.relu(x).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);

        let a = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = tape.constant(t(&[2, 3], &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]));
        let c = tape.concat_cols(&[a, b]).unwrap();
        assert_eq!(tape.shape(c), &[2, 6]);
        assert_eq!(
            tape.value(c).data(),
            &[1.0, 2.0, 3.0, 7.0, 8.0, 9.0, 4.0, 5.0, 6.0, 10.0, 11.0, 12.0]
        );

        let odd = tape.constant(t(&[2], &[0.1, 1.0 / 3.0]));
        let m = tape.mean(&[odd, odd, odd, odd, odd]).unwrap();
        assert_eq!(tape.value(m).data(), &[0.1, 1.0 / 3.0]);
    }

    #[test]
    fn layer_norm_examples() {
        let mut tape = Tape::new();
        let gain = tape.constant(Tensor::filled([2], 1.0));
        let bias = tape.constant(Tensor::zeros([2]));
        let x = tape.constant(t(&[2, 2], &[3.0, 3.0, 1.0, -1.0]));
        let y = tape.layer_norm(x, gain, bias).unwrap();
        let y = tape.value(y).data();
        assert_eq!(&y[0..2], &[0.0, 0.0]);
        let expect = 1.0 / (1.0f64 + LAYER_NORM_EPS).sqrt();
        assert!((y[2] - expect).abs() < 1e-15 && (y[3] + expect).abs() < 1e-15);

        let d = 7;
        let mut tape = Tape::new();
        let gain = tape.constant(Tensor::filled([d], 1.0));
        let bias = tape.constant(Tensor::zeros([d]));
        // output variance is var / (var + eps); keep var well above 10 * eps / 1e-6
        let x = tape.constant(Tensor::from_fn([1, d], |i| (i as f64 * 1.3).sin() * 12.0 + 2.0));
        let y = tape.layer_norm(x, gain, bias).unwrap();
        let y = tape.value(y).data();
        let mean = y.iter().sum::<f64>() / d as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        assert!(mean.abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn backward_closed_forms() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 2], &[1.0, -2.0, 3.0, 0.5]), true);
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 4]);

        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[1.0, -2.0, 3.0]), true);
        let unused = tape.leaf(t(&[2], &[5.0, 5.0]), true);
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        let half = tape.scale(s, 0.5).unwrap();
        let g = tape.backward(half).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, -2.0, 3.0]);
        assert_eq!(g.get(unused).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros([2]), true);
        assert!(matches!(tape.backward(x), Err(MatError::Contract(_))));
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::filled([2], 1e300));
        let err = tape.mul(x, x).unwrap_err();
        assert!(matches!(err, MatError::NonFinite { op: "mul", .. }));
    }

    #[test]
    fn smoothed_nll_uniform_logits() {
        let mut tape = Tape::<f64>::new();
        let l = tape.constant(Tensor::zeros([2, 5]));
        let loss = tape.smoothed_nll(l, &[Some(1), Some(4)], 0.0).unwrap();
        assert!((tape.value(loss).data()[0] - 5f64.ln()).abs() < 1e-14);
        assert!(tape.smoothed_nll(l, &[None, None], 0.0).is_err());
    }
}
