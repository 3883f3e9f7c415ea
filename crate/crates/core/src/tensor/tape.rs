//! Reverse-mode tape over [`Tensor`] values.
//!
//! Every op appends a node holding its output and whatever it needs for the
//! backward pass. Nodes only reference earlier nodes, so reverse insertion
//! order is a valid topological order and backward visits each node once.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ParamId, ParamStore, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Reduce over rows, giving `1 x cols`.
    Rows,
    /// Reduce over columns, giving `rows x 1`.
    Cols,
    All,
}

/// Deliberate backward-pass faults, used to check that gradient checking
/// catches broken derivatives.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMutation {
    /// Uses `1 - y` instead of `1 - y^2` as the tanh derivative.
    TanhBackward,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Scale(Var, f64),
    SoftmaxMasked(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Dropout(Var, Vec<f64>),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    Sum(Var, Axis),
    Mean(Var, Axis),
    Bce {
        prob: Var,
        label: f64,
        pos_weight: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    rng: ChaCha8Rng,
    checked: bool,
    mutation: Option<GradMutation>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new(0)
    }
}

impl Tape {
    /// A fresh tape; `seed` drives dropout masks.
    pub fn new(seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            checked: true,
            mutation: None,
        }
    }

    /// Toggles the per-op finiteness check (on by default).
    pub fn set_checked(&mut self, checked: bool) {
        self.checked = checked;
    }

    #[doc(hidden)]
    pub fn inject_mutation(&mut self, mutation: GradMutation) {
        self.mutation = Some(mutation);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var, TensorError> {
        if self.checked && !value.all_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let needs_grad = matches!(op, Op::Param) || inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A constant input; no gradient flows into it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Places a learnable tensor on the tape. Repeated calls with the same id
    /// return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.get(id).clone(),
            op: Op::Param,
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.rows() {
            return Err(TensorError::ShapeMismatch { op: "matmul", lhs: x.shape(), rhs: y.shape() });
        }
        let (n, k, m) = (x.rows(), x.cols(), y.cols());
        let mut out = vec![0.0; n * m];
        let (xd, yd) = (x.data(), y.data());
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let a_ip = xd[i * k + p];
                if a_ip == 0.0 {
                    continue;
                }
                let brow = &yd[p * m..(p + 1) * m];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += a_ip * bv;
                }
            }
        }
        let value = Tensor::from_vec(n, m, out)?;
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ` without materialising the transpose.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.cols() {
            return Err(TensorError::ShapeMismatch { op: "matmul_t", lhs: x.shape(), rhs: y.shape() });
        }
        let (n, m) = (x.rows(), y.rows());
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let xr = x.row(i);
            for j in 0..m {
                out.push(dot(xr, y.row(j)));
            }
        }
        let value = Tensor::from_vec(n, m, out)?;
        self.push("matmul_t", value, Op::MatMulT(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = transposed(self.value(a));
        self.push("transpose", value, Op::Transpose(a), &[a])
    }

    /// Elementwise sum of equal shapes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(TensorError::ShapeMismatch { op: "add", lhs: x.shape(), rhs: y.shape() });
        }
        let mut value = x.clone();
        value.add_assign(y);
        self.push("add", value, Op::Add(a, b), &[a, b])
    }

    /// Adds a `1 x cols` row to every row of `a` (broadcast over the leading dim).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(TensorError::ShapeMismatch { op: "add_row", lhs: x.shape(), rhs: r.shape() });
        }
        let mut value = x.clone();
        for i in 0..value.rows() {
            for (v, b) in value.row_mut(i).iter_mut().zip(r.data()) {
                *v += b;
            }
        }
        self.push("add_row", value, Op::AddRow(a, row), &[a, row])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = self.value(a).map(f64::tanh);
        self.push("tanh", value, Op::Tanh(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push("relu", value, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = self.value(a).map(sigmoid);
        self.push("sigmoid", value, Op::Sigmoid(a), &[a])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        let value = self.value(a).map(|v| v * c);
        self.push("scale", value, Op::Scale(a, c), &[a])
    }

    /// Row-wise softmax over the columns where `mask` is true. Masked columns
    /// get exactly zero probability. `mask` has one flag per column and
    /// applies to every row.
    pub fn softmax_masked(&mut self, a: Var, mask: &[bool]) -> Result<Var, TensorError> {
        let x = self.value(a);
        if mask.len() != x.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "softmax_masked",
                lhs: x.shape(),
                rhs: (1, mask.len()),
            });
        }
        if !mask.iter().any(|&m| m) {
            return Err(TensorError::AllMasked { op: "softmax_masked" });
        }
        let mut value = Tensor::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            softmax_row(x.row(i), mask, value.row_mut(i));
        }
        self.push("softmax_masked", value, Op::SoftmaxMasked(a), &[a])
    }

    /// Row-wise normalisation to zero mean and unit variance followed by the
    /// affine `gamma * xhat + beta` (`gamma`, `beta` are `1 x cols`).
    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, TensorError> {
        let (x, g, b) = (self.value(a), self.value(gamma), self.value(beta));
        if g.shape() != (1, x.cols()) || b.shape() != (1, x.cols()) {
            return Err(TensorError::ShapeMismatch { op: "layer_norm", lhs: x.shape(), rhs: g.shape() });
        }
        let (n, d) = x.shape();
        let mut xhat = vec![0.0; n * d];
        let mut rstd = vec![0.0; n];
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd[i] = r;
            for j in 0..d {
                let h = (row[j] - mean) * r;
                xhat[i * d + j] = h;
                out[i * d + j] = h * g.data()[j] + b.data()[j];
            }
        }
        let value = Tensor::from_vec(n, d, out)?;
        self.push(
            "layer_norm",
            value,
            Op::LayerNorm { x: a, gamma, beta, xhat, rstd },
            &[a, gamma, beta],
        )
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1 / (1 - p)`. Identity
    /// otherwise.
    pub fn dropout(&mut self, a: Var, p: f64, train: bool) -> Result<Var, TensorError> {
        if !train || p <= 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - p;
        let len = self.value(a).len();
        let mult: Vec<f64> = (0..len)
            .map(|_| if self.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let x = self.value(a);
        let data = x.data().iter().zip(&mult).map(|(v, m)| v * m).collect();
        let value = Tensor::from_vec(x.rows(), x.cols(), data)?;
        self.push("dropout", value, Op::Dropout(a, mult), &[a])
    }

    /// Gathers rows of `table` by index.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * t.cols());
        for &id in ids {
            if id >= t.rows() {
                return Err(TensorError::IndexOutOfRange { op: "embedding", index: id, len: t.rows() });
            }
            data.extend_from_slice(t.row(id));
        }
        let value = Tensor::from_vec(ids.len(), t.cols(), data)?;
        self.push("embedding", value, Op::Embedding { table, ids: ids.to_vec() }, &[table])
    }

    /// Concatenates along the last dimension.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(TensorError::ShapeMismatch { op: "concat_cols", lhs: self.shape(parts[0]), rhs: s });
            }
            cols += s.1;
        }
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = Tensor::from_vec(rows, cols, out)?;
        self.push("concat_cols", value, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let x = self.value(a);
        if start + len > x.cols() {
            return Err(TensorError::IndexOutOfRange { op: "slice_cols", index: start + len, len: x.cols() });
        }
        let mut out = Vec::with_capacity(x.rows() * len);
        for i in 0..x.rows() {
            out.extend_from_slice(&x.row(i)[start..start + len]);
        }
        let value = Tensor::from_vec(x.rows(), len, out)?;
        self.push("slice_cols", value, Op::SliceCols { x: a, start }, &[a])
    }

    pub fn sum(&mut self, a: Var, axis: Axis) -> Result<Var, TensorError> {
        let value = reduce_sum(self.value(a), axis);
        self.push("sum", value, Op::Sum(a, axis), &[a])
    }

    pub fn mean(&mut self, a: Var, axis: Axis) -> Result<Var, TensorError> {
        let x = self.value(a);
        let count = reduce_count(x, axis) as f64;
        let value = reduce_sum(x, axis).map(|v| v / count);
        self.push("mean", value, Op::Mean(a, axis), &[a])
    }

    /// Binary cross-entropy of a `1 x 1` probability. The probability is
    /// clamped into `[1e-7, 1 - 1e-7]` before the log; `pos_weight` scales
    /// the positive-class term.
    pub fn bce_loss(&mut self, prob: Var, label: f64, pos_weight: f64) -> Result<Var, TensorError> {
        let p = self.value(prob);
        if p.shape() != (1, 1) {
            return Err(TensorError::ShapeMismatch { op: "bce_loss", lhs: p.shape(), rhs: (1, 1) });
        }
        let pc = p.item().clamp(BCE_EPS, 1.0 - BCE_EPS);
        let loss = -(pos_weight * label * pc.ln() + (1.0 - label) * (1.0 - pc).ln());
        self.push("bce_loss", Tensor::scalar(loss), Op::Bce { prob, label, pos_weight }, &[prob])
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(TensorError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.backward_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, params: self.params.clone() })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backward_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (x, w) = (self.value(*a), self.value(*b));
                let (n, k, m) = (x.rows(), x.cols(), w.cols());
                if self.wants(*a) {
                    // dA = G · Bᵀ
                    let mut da = vec![0.0; n * k];
                    for i in 0..n {
                        let gr = g.row(i);
                        for p in 0..k {
                            da[i * k + p] = dot(gr, w.row(p));
                        }
                    }
                    accumulate(grads, *a, n, k, da);
                }
                if self.wants(*b) {
                    // dB = Aᵀ · G
                    let mut db = vec![0.0; k * m];
                    for i in 0..n {
                        let gr = g.row(i);
                        let xr = x.row(i);
                        for p in 0..k {
                            let a_ip = xr[p];
                            if a_ip == 0.0 {
                                continue;
                            }
                            for (d, &gv) in db[p * m..(p + 1) * m].iter_mut().zip(gr) {
                                *d += a_ip * gv;
                            }
                        }
                    }
                    accumulate(grads, *b, k, m, db);
                }
            }
            Op::MatMulT(a, b) => {
                let (x, w) = (self.value(*a), self.value(*b));
                let (n, k, m) = (x.rows(), x.cols(), w.rows());
                if self.wants(*a) {
                    // dA = G · B
                    let mut da = vec![0.0; n * k];
                    for i in 0..n {
                        let dr = &mut da[i * k..(i + 1) * k];
                        for j in 0..m {
                            let gv = g.get(i, j);
                            if gv == 0.0 {
                                continue;
                            }
                            for (d, &bv) in dr.iter_mut().zip(w.row(j)) {
                                *d += gv * bv;
                            }
                        }
                    }
                    accumulate(grads, *a, n, k, da);
                }
                if self.wants(*b) {
                    // dB = Gᵀ · A
                    let mut db = vec![0.0; m * k];
                    for i in 0..n {
                        let xr = x.row(i);
                        for j in 0..m {
                            let gv = g.get(i, j);
                            if gv == 0.0 {
                                continue;
                            }
                            for (d, &av) in db[j * k..(j + 1) * k].iter_mut().zip(xr) {
                                *d += gv * av;
                            }
                        }
                    }
                    accumulate(grads, *b, m, k, db);
                }
            }
            Op::Transpose(a) => {
                if self.wants(*a) {
                    let t = transposed(g);
                    accumulate_tensor(grads, *a, t);
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    accumulate_tensor(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    accumulate_tensor(grads, *b, g.clone());
                }
            }
            Op::AddRow(a, r) => {
                if self.wants(*a) {
                    accumulate_tensor(grads, *a, g.clone());
                }
                if self.wants(*r) {
                    accumulate_tensor(grads, *r, reduce_sum(g, Axis::Rows));
                }
            }
            Op::Tanh(a) => {
                if self.wants(*a) {
                    let corrupt = self.mutation == Some(GradMutation::TanhBackward);
                    let data = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(gv, yv)| if corrupt { gv * (1.0 - yv) } else { gv * (1.0 - yv * yv) })
                        .collect();
                    accumulate(grads, *a, y.rows(), y.cols(), data);
                }
            }
            Op::Relu(a) => {
                if self.wants(*a) {
                    let data = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(gv, yv)| if *yv > 0.0 { *gv } else { 0.0 })
                        .collect();
                    accumulate(grads, *a, y.rows(), y.cols(), data);
                }
            }
            Op::Sigmoid(a) => {
                if self.wants(*a) {
                    let data = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(gv, yv)| gv * yv * (1.0 - yv))
                        .collect();
                    accumulate(grads, *a, y.rows(), y.cols(), data);
                }
            }
            Op::Scale(a, c) => {
                if self.wants(*a) {
                    accumulate_tensor(grads, *a, g.map(|v| v * c));
                }
            }
            Op::SoftmaxMasked(a) => {
                if self.wants(*a) {
                    let mut dx = Tensor::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let (yr, gr) = (y.row(i), g.row(i));
                        let s = dot(yr, gr);
                        for (d, (yv, gv)) in dx.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                            *d = yv * (gv - s);
                        }
                    }
                    accumulate_tensor(grads, *a, dx);
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let (n, d) = y.shape();
                let gam = self.value(*gamma);
                if self.wants(*x) {
                    let mut dx = vec![0.0; n * d];
                    for i in 0..n {
                        let gr = g.row(i);
                        let xh = &xhat[i * d..(i + 1) * d];
                        let mut mean_dxh = 0.0;
                        let mut mean_dxh_xh = 0.0;
                        for j in 0..d {
                            let dxh = gr[j] * gam.data()[j];
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * xh[j];
                        }
                        mean_dxh /= d as f64;
                        mean_dxh_xh /= d as f64;
                        for j in 0..d {
                            let dxh = gr[j] * gam.data()[j];
                            dx[i * d + j] = rstd[i] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                        }
                    }
                    accumulate(grads, *x, n, d, dx);
                }
                if self.wants(*gamma) {
                    let mut dg = vec![0.0; d];
                    for i in 0..n {
                        for j in 0..d {
                            dg[j] += g.get(i, j) * xhat[i * d + j];
                        }
                    }
                    accumulate(grads, *gamma, 1, d, dg);
                }
                if self.wants(*beta) {
                    accumulate_tensor(grads, *beta, reduce_sum(g, Axis::Rows));
                }
            }
            Op::Dropout(a, mult) => {
                if self.wants(*a) {
                    let data = g.data().iter().zip(mult).map(|(gv, m)| gv * m).collect();
                    accumulate(grads, *a, y.rows(), y.cols(), data);
                }
            }
            Op::Embedding { table, ids } => {
                if self.wants(*table) {
                    let t = self.value(*table);
                    let mut dt = Tensor::zeros(t.rows(), t.cols());
                    for (i, &id) in ids.iter().enumerate() {
                        for (d, gv) in dt.row_mut(id).iter_mut().zip(g.row(i)) {
                            *d += gv;
                        }
                    }
                    accumulate_tensor(grads, *table, dt);
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    if self.wants(p) {
                        let mut part = Vec::with_capacity(r * c);
                        for i in 0..r {
                            part.extend_from_slice(&g.row(i)[offset..offset + c]);
                        }
                        accumulate(grads, p, r, c, part);
                    }
                    offset += c;
                }
            }
            Op::SliceCols { x, start } => {
                if self.wants(*x) {
                    let (r, c) = self.shape(*x);
                    let mut dx = Tensor::zeros(r, c);
                    for i in 0..r {
                        dx.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    accumulate_tensor(grads, *x, dx);
                }
            }
            Op::Sum(a, axis) | Op::Mean(a, axis) => {
                if self.wants(*a) {
                    let x = self.value(*a);
                    let scale = if matches!(node.op, Op::Mean(..)) {
                        1.0 / reduce_count(x, *axis) as f64
                    } else {
                        1.0
                    };
                    let mut dx = Tensor::zeros(x.rows(), x.cols());
                    for i in 0..x.rows() {
                        for j in 0..x.cols() {
                            let gv = match axis {
                                Axis::Rows => g.get(0, j),
                                Axis::Cols => g.get(i, 0),
                                Axis::All => g.get(0, 0),
                            };
                            dx.row_mut(i)[j] = gv * scale;
                        }
                    }
                    accumulate_tensor(grads, *a, dx);
                }
            }
            Op::Bce { prob, label, pos_weight } => {
                if self.wants(*prob) {
                    let p = self.value(*prob).item();
                    let d = if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
                        0.0
                    } else {
                        -pos_weight * label / p + (1.0 - label) / (1.0 - p)
                    };
                    accumulate_tensor(grads, *prob, Tensor::scalar(g.item() * d));
                }
            }
        }
    }
}

/// Gradients of one backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: HashMap<ParamId, Var>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of every parameter in `store` order; parameters that did not
    /// take part in the graph get zeros.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<Tensor> {
        store
            .iter()
            .map(|(id, _, t)| {
                self.params
                    .get(&id)
                    .and_then(|v| self.wrt(*v))
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()))
            })
            .collect()
    }
}

const BCE_EPS: f64 = 1e-7;

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax_row(x: &[f64], mask: &[bool], out: &mut [f64]) {
    let max = x
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for ((o, &v), &m) in out.iter_mut().zip(x).zip(mask) {
        *o = if m { (v - max).exp() } else { 0.0 };
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

fn transposed(x: &Tensor) -> Tensor {
    let (r, c) = x.shape();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x.get(i, j);
        }
    }
    Tensor::from_vec(c, r, out).expect("transpose keeps element count")
}

fn reduce_count(x: &Tensor, axis: Axis) -> usize {
    match axis {
        Axis::Rows => x.rows(),
        Axis::Cols => x.cols(),
        Axis::All => x.len(),
    }
}

fn reduce_sum(x: &Tensor, axis: Axis) -> Tensor {
    match axis {
        Axis::Rows => {
            let mut out = vec![0.0; x.cols()];
            for i in 0..x.rows() {
                for (o, v) in out.iter_mut().zip(x.row(i)) {
                    *o += v;
                }
            }
            Tensor::row_vector(out)
        }
        Axis::Cols => Tensor::column_vector((0..x.rows()).map(|i| x.row(i).iter().sum()).collect()),
        Axis::All => Tensor::scalar(x.data().iter().sum()),
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, rows: usize, cols: usize, data: Vec<f64>) {
    accumulate_tensor(grads, v, Tensor::from_vec(rows, cols, data).expect("gradient shape"));
}

fn accumulate_tensor(grads: &mut [Option<Tensor>], v: Var, t: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&t),
        slot @ None => *slot = Some(t),
    }
}
