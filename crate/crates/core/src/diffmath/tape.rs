//! Reverse-mode differentiation over a linear tape of tensor operations.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order; [`Tape::backward`] walks it once in reverse.

use std::sync::Arc;

use super::tensor::{matmul_at_into, matmul_bt_into};
use super::{DiffError, ParamId, ParamStore, Result, Tensor};

pub const BN_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Undirected neighbour lists shared by every aggregation on one map.
pub type Adjacency = Arc<Vec<Vec<usize>>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    AddRow,
    MulRow,
    Scale,
    Hadamard,
    ConcatCols,
    SliceCols,
    SliceRows,
    RepeatRow,
    SumRows,
    SumAll,
    Reshape,
    Sigmoid,
    Tanh,
    Relu,
    BatchNorm,
    SoftmaxRows,
    CrossEntropy,
    GinAggregate,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Hadamard(Var, Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    RepeatRow(Var),
    SumRows(Var),
    SumAll(Var),
    Reshape(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
        // frozen statistics: the normalisation is a constant affine map
        frozen: bool,
    },
    SoftmaxRows(Var),
    CrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
    GinAggregate {
        x: Var,
        eps: Var,
        adj: Adjacency,
    },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::AddRow(..) => OpKind::AddRow,
            Op::MulRow(..) => OpKind::MulRow,
            Op::Scale(..) => OpKind::Scale,
            Op::Hadamard(..) => OpKind::Hadamard,
            Op::ConcatCols(..) => OpKind::ConcatCols,
            Op::SliceCols(..) => OpKind::SliceCols,
            Op::SliceRows(..) => OpKind::SliceRows,
            Op::RepeatRow(..) => OpKind::RepeatRow,
            Op::SumRows(..) => OpKind::SumRows,
            Op::SumAll(..) => OpKind::SumAll,
            Op::Reshape(..) => OpKind::Reshape,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::Tanh(..) => OpKind::Tanh,
            Op::Relu(..) => OpKind::Relu,
            Op::BatchNorm { .. } => OpKind::BatchNorm,
            Op::SoftmaxRows(..) => OpKind::SoftmaxRows,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
            Op::GinAggregate { .. } => OpKind::GinAggregate,
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Batch statistics observed by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BnStats {
    pub mean_buffer: ParamId,
    pub var_buffer: ParamId,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Per-parameter gradients produced by [`Tape::backward`].
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: vec![None; store.len()],
        }
    }

    /// Gradient for `id`; `None` when the parameter was not on the path to the loss.
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient for `id`, materialising zeros for unused parameters.
    pub fn get_or_zero(&self, store: &ParamStore, id: ParamId) -> Tensor {
        self.get(id).cloned().unwrap_or_else(|| {
            let v = store.get(id);
            Tensor::new(v.shape().to_vec(), vec![0.0; v.numel()]).unwrap()
        })
    }

    /// `self += scale · other`.
    pub fn accumulate(&mut self, other: &Gradients, scale: f64) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(t) = theirs {
                match mine {
                    Some(m) => {
                        for (a, b) in m.data_mut().iter_mut().zip(t.data()) {
                            *a += scale * b;
                        }
                    }
                    None => {
                        let mut c = t.clone();
                        c.scale_assign(scale);
                        *mine = Some(c);
                    }
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.scale_assign(s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(Tensor::is_finite)
    }
}

/// Records a forward computation for later differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
    param_slots: Vec<Option<Var>>,
    bn_stats: Vec<BnStats>,
    fault: Option<(OpKind, f64)>,
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(DiffError::Shape(msg))
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Scales the adjoint of every `kind` operation by `factor`. Used to
    /// confirm that gradient checks detect a broken backward rule.
    #[doc(hidden)]
    pub fn inject_adjoint_fault(&mut self, kind: OpKind, factor: f64) {
        self.fault = Some((kind, factor));
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn shape2(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    /// Records a constant (no gradient is reported for it).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf for a registered parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if self.param_slots.len() <= id.0 {
            self.param_slots.resize(id.0 + 1, None);
        }
        if let Some(v) = self.param_slots[id.0] {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf);
        self.param_slots[id.0] = Some(v);
        self.params.push((id, v));
        v
    }

    pub fn bn_stats(&self) -> &[BnStats] {
        &self.bn_stats
    }

    pub fn take_bn_stats(&mut self) -> Vec<BnStats> {
        std::mem::take(&mut self.bn_stats)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return shape_err(format!("add {:?} + {:?}", self.value(a).shape(), self.value(b).shape()));
        }
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Adds a `1 × m` row to every row of an `n × m` tensor.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (n, m) = self.shape2(a);
        if self.shape2(row) != (1, m) {
            return shape_err(format!("add_row {n}x{m} with {:?}", self.value(row).shape()));
        }
        let r = self.value(row).data().to_vec();
        let mut out = self.value(a).clone();
        for chunk in out.data_mut().chunks_mut(m) {
            for (o, b) in chunk.iter_mut().zip(&r) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    /// Multiplies every row of an `n × m` tensor elementwise by a `1 × m` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (n, m) = self.shape2(a);
        if self.shape2(row) != (1, m) {
            return shape_err(format!("mul_row {n}x{m} with {:?}", self.value(row).shape()));
        }
        let r = self.value(row).data().to_vec();
        let mut out = self.value(a).clone();
        for chunk in out.data_mut().chunks_mut(m) {
            for (o, b) in chunk.iter_mut().zip(&r) {
                *o *= b;
            }
        }
        Ok(self.push(out, Op::MulRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.push(value, Op::Scale(a, s))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return shape_err(format!("hadamard {:?} * {:?}", self.value(a).shape(), self.value(b).shape()));
        }
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(value, Op::Hadamard(a, b)))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, ma) = self.shape2(a);
        let (nb, mb) = self.shape2(b);
        if na != nb {
            return shape_err(format!("concat_cols {na}x{ma} with {nb}x{mb}"));
        }
        let mut out = Vec::with_capacity(na * (ma + mb));
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for i in 0..na {
            out.extend_from_slice(&da[i * ma..(i + 1) * ma]);
            out.extend_from_slice(&db[i * mb..(i + 1) * mb]);
        }
        Ok(self.push(Tensor::from_parts(na, ma + mb, out), Op::ConcatCols(a, b)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let (n, m) = self.shape2(a);
        if start + width > m || width == 0 {
            return shape_err(format!("slice_cols [{start}, {}) of {n}x{m}", start + width));
        }
        let d = self.value(a).data();
        let mut out = Vec::with_capacity(n * width);
        for i in 0..n {
            out.extend_from_slice(&d[i * m + start..i * m + start + width]);
        }
        Ok(self.push(Tensor::from_parts(n, width, out), Op::SliceCols(a, start)))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, count: usize) -> Result<Var> {
        let (n, m) = self.shape2(a);
        if start + count > n || count == 0 {
            return shape_err(format!("slice_rows [{start}, {}) of {n}x{m}", start + count));
        }
        let out = self.value(a).data()[start * m..(start + count) * m].to_vec();
        Ok(self.push(Tensor::from_parts(count, m, out), Op::SliceRows(a, start)))
    }

    /// Tiles a `1 × m` row into `n × m`.
    pub fn repeat_row(&mut self, a: Var, n: usize) -> Result<Var> {
        let (r, m) = self.shape2(a);
        if r != 1 {
            return shape_err(format!("repeat_row needs one row, got {r}"));
        }
        let row = self.value(a).data();
        let out = row.repeat(n);
        Ok(self.push(Tensor::from_parts(n, m, out), Op::RepeatRow(a)))
    }

    /// Column sums as a `1 × m` row.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_rows();
        self.push(value, Op::SumRows(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        if rows * cols != self.value(a).numel() {
            return shape_err(format!("reshape {:?} to {rows}x{cols}", self.value(a).shape()));
        }
        let data = self.value(a).data().to_vec();
        Ok(self.push(Tensor::from_parts(rows, cols, data), Op::Reshape(a)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    /// Batch normalisation over rows. With `frozen = Some((mean, var))` the
    /// supplied statistics are used; otherwise batch statistics are computed
    /// and reported through [`Tape::bn_stats`] under `buffers`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        frozen: Option<(&[f64], &[f64])>,
        buffers: Option<(ParamId, ParamId)>,
    ) -> Result<Var> {
        let (n, m) = self.shape2(x);
        if self.shape2(gamma) != (1, m) || self.shape2(beta) != (1, m) {
            return shape_err(format!("batch_norm on {n}x{m} with gamma/beta of wrong shape"));
        }
        let xv = self.value(x).data();
        let (mean, var) = match frozen {
            Some((mean, var)) => {
                if mean.len() != m || var.len() != m {
                    return shape_err("batch_norm statistics of wrong length".into());
                }
                (mean.to_vec(), var.to_vec())
            }
            None => {
                let mut mean = vec![0.0; m];
                for row in xv.chunks(m) {
                    for (a, v) in mean.iter_mut().zip(row) {
                        *a += v;
                    }
                }
                mean.iter_mut().for_each(|a| *a /= n as f64);
                let mut var = vec![0.0; m];
                for row in xv.chunks(m) {
                    for ((a, v), mu) in var.iter_mut().zip(row).zip(&mean) {
                        *a += (v - mu) * (v - mu);
                    }
                }
                var.iter_mut().for_each(|a| *a /= n as f64);
                (mean, var)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = vec![0.0; n * m];
        for (i, row) in xv.chunks(m).enumerate() {
            for j in 0..m {
                xhat[i * m + j] = (row[j] - mean[j]) * inv_std[j];
            }
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[i * m + j] = g[j] * xhat[i * m + j] + b[j];
            }
        }
        if frozen.is_none() {
            if let Some((mean_buffer, var_buffer)) = buffers {
                self.bn_stats.push(BnStats {
                    mean_buffer,
                    var_buffer,
                    mean,
                    var,
                });
            }
        }
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat: Tensor::from_parts(n, m, xhat),
            inv_std,
            frozen: frozen.is_some(),
        };
        Ok(self.push(Tensor::from_parts(n, m, out), op))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.cols();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(m) {
            let mx = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let value = Tensor::from_parts(t.rows(), m, out);
        self.push(value, Op::SoftmaxRows(a))
    }

    /// `−log softmax(logits)[target]` for a single `1 × n` row of logits.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let (r, n) = self.shape2(logits);
        if r != 1 {
            return shape_err(format!("cross_entropy expects one row of logits, got {r}"));
        }
        if target >= n {
            return Err(DiffError::Target(target, n));
        }
        let l = self.value(logits).data();
        let mx = l.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut probs: Vec<f64> = l.iter().map(|v| (v - mx).exp()).collect();
        let s: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= s);
        let loss = s.ln() + mx - l[target];
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, target, probs }))
    }

    /// Row `i` becomes `(1 + ε)·x_i + Σ_{j ∈ adj[i]} x_j`.
    pub fn gin_aggregate(&mut self, x: Var, eps: Var, adj: &Adjacency) -> Result<Var> {
        let (n, m) = self.shape2(x);
        if adj.len() != n {
            return shape_err(format!("adjacency for {} nodes applied to {n} rows", adj.len()));
        }
        if self.value(eps).numel() != 1 {
            return shape_err("epsilon must be a scalar".into());
        }
        let e = 1.0 + self.value(eps).item();
        let xv = self.value(x).data();
        let mut out = vec![0.0; n * m];
        for (i, nbrs) in adj.iter().enumerate() {
            let orow = &mut out[i * m..(i + 1) * m];
            for (o, v) in orow.iter_mut().zip(&xv[i * m..(i + 1) * m]) {
                *o = e * v;
            }
            for &j in nbrs {
                if j >= n {
                    return shape_err(format!("neighbour {j} out of range for {n} nodes"));
                }
                for (o, v) in orow.iter_mut().zip(&xv[j * m..(j + 1) * m]) {
                    *o += v;
                }
            }
        }
        let op = Op::GinAggregate {
            x,
            eps,
            adj: Arc::clone(adj),
        };
        Ok(self.push(Tensor::from_parts(n, m, out), op))
    }

    /// Mean of several scalars.
    pub fn mean(&mut self, items: &[Var]) -> Result<Var> {
        let (first, rest) = items
            .split_first()
            .ok_or_else(|| DiffError::Shape("mean of nothing".into()))?;
        let mut acc = *first;
        for &v in rest {
            acc = self.add(acc, v)?;
        }
        Ok(self.scale(acc, 1.0 / items.len() as f64))
    }

    /// Gradients of the scalar `loss` with respect to every parameter leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(DiffError::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let contributions = self.adjoint(node, &g);
            let factor = match self.fault {
                Some((kind, f)) if kind == node.op.kind() => f,
                _ => 1.0,
            };
            for (parent, mut contrib) in contributions {
                if factor != 1.0 {
                    contrib.scale_assign(factor);
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            // keep gradients of parameter leaves
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }

        let max_param = self.params.iter().map(|(id, _)| id.0 + 1).max().unwrap_or(0);
        let mut out = vec![None; max_param];
        for &(id, var) in &self.params {
            if var.0 <= loss.0 {
                out[id.0] = grads[var.0].take();
            }
        }
        Ok(Gradients { grads: out })
    }

    fn adjoint(&self, node: &Node, g: &Tensor) -> Vec<(Var, Tensor)> {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                let mut ga = vec![0.0; n * k];
                matmul_bt_into(g.data(), bv.data(), &mut ga, n, m, k);
                let mut gb = vec![0.0; k * m];
                matmul_at_into(av.data(), g.data(), &mut gb, n, k, m);
                vec![(*a, Tensor::from_parts(n, k, ga)), (*b, Tensor::from_parts(k, m, gb))]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::AddRow(a, r) => vec![(*a, g.clone()), (*r, g.sum_rows())],
            Op::MulRow(a, r) => {
                let m = g.cols();
                let rv = val(*r).data();
                let av = val(*a).data();
                let mut ga = g.clone();
                let mut gr = vec![0.0; m];
                for (i, chunk) in ga.data_mut().chunks_mut(m).enumerate() {
                    for j in 0..m {
                        gr[j] += chunk[j] * av[i * m + j];
                        chunk[j] *= rv[j];
                    }
                }
                vec![(*a, ga), (*r, Tensor::from_parts(1, m, gr))]
            }
            Op::Scale(a, s) => vec![(*a, g.map(|x| x * s))],
            Op::Hadamard(a, b) => vec![
                (*a, g.zip_map(val(*b), |x, y| x * y)),
                (*b, g.zip_map(val(*a), |x, y| x * y)),
            ],
            Op::ConcatCols(a, b) => {
                let (n, ma) = (val(*a).rows(), val(*a).cols());
                let mb = val(*b).cols();
                let m = ma + mb;
                let mut ga = Vec::with_capacity(n * ma);
                let mut gb = Vec::with_capacity(n * mb);
                for row in g.data().chunks(m) {
                    ga.extend_from_slice(&row[..ma]);
                    gb.extend_from_slice(&row[ma..]);
                }
                vec![(*a, Tensor::from_parts(n, ma, ga)), (*b, Tensor::from_parts(n, mb, gb))]
            }
            Op::SliceCols(a, start) => {
                let (n, m) = (val(*a).rows(), val(*a).cols());
                let w = g.cols();
                let mut ga = vec![0.0; n * m];
                for (i, row) in g.data().chunks(w).enumerate() {
                    ga[i * m + start..i * m + start + w].copy_from_slice(row);
                }
                vec![(*a, Tensor::from_parts(n, m, ga))]
            }
            Op::SliceRows(a, start) => {
                let (n, m) = (val(*a).rows(), val(*a).cols());
                let mut ga = vec![0.0; n * m];
                ga[start * m..start * m + g.numel()].copy_from_slice(g.data());
                vec![(*a, Tensor::from_parts(n, m, ga))]
            }
            Op::RepeatRow(a) => vec![(*a, g.sum_rows())],
            Op::SumRows(a) => {
                let n = val(*a).rows();
                vec![(*a, Tensor::from_parts(n, g.cols(), g.data().repeat(n)))]
            }
            Op::SumAll(a) => {
                let t = val(*a);
                vec![(*a, Tensor::new(t.shape().to_vec(), vec![g.item(); t.numel()]).unwrap())]
            }
            Op::Reshape(a) => {
                let t = val(*a);
                vec![(*a, Tensor::new(t.shape().to_vec(), g.data().to_vec()).unwrap())]
            }
            Op::Sigmoid(a) => vec![(*a, g.zip_map(&node.value, |gg, y| gg * y * (1.0 - y)))],
            Op::Tanh(a) => vec![(*a, g.zip_map(&node.value, |gg, y| gg * (1.0 - y * y)))],
            Op::Relu(a) => vec![(*a, g.zip_map(val(*a), |gg, x| if x > 0.0 { gg } else { 0.0 }))],
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                frozen,
            } => {
                let (n, m) = (xhat.rows(), xhat.cols());
                let gam = val(*gamma).data();
                let mut ggamma = vec![0.0; m];
                let mut gbeta = vec![0.0; m];
                let mut sum_gxh = vec![0.0; m];
                let mut sum_gxh_xh = vec![0.0; m];
                let gd = g.data();
                let xh = xhat.data();
                for i in 0..n {
                    for j in 0..m {
                        let k = i * m + j;
                        ggamma[j] += gd[k] * xh[k];
                        gbeta[j] += gd[k];
                        let gx = gd[k] * gam[j];
                        sum_gxh[j] += gx;
                        sum_gxh_xh[j] += gx * xh[k];
                    }
                }
                let mut gx = vec![0.0; n * m];
                let nf = n as f64;
                for i in 0..n {
                    for j in 0..m {
                        let k = i * m + j;
                        let gxh = gd[k] * gam[j];
                        gx[k] = if *frozen {
                            gxh * inv_std[j]
                        } else {
                            inv_std[j] / nf * (nf * gxh - sum_gxh[j] - xh[k] * sum_gxh_xh[j])
                        };
                    }
                }
                vec![
                    (*x, Tensor::from_parts(n, m, gx)),
                    (*gamma, Tensor::from_parts(1, m, ggamma)),
                    (*beta, Tensor::from_parts(1, m, gbeta)),
                ]
            }
            Op::SoftmaxRows(a) => {
                let m = g.cols();
                let mut ga = vec![0.0; g.numel()];
                for ((grow, prow), orow) in g.data().chunks(m).zip(node.value.data().chunks(m)).zip(ga.chunks_mut(m)) {
                    let dot: f64 = grow.iter().zip(prow).map(|(x, y)| x * y).sum();
                    for j in 0..m {
                        orow[j] = prow[j] * (grow[j] - dot);
                    }
                }
                vec![(*a, Tensor::from_parts(g.rows(), m, ga))]
            }
            Op::CrossEntropy { logits, target, probs } => {
                let s = g.item();
                let mut gl: Vec<f64> = probs.iter().map(|p| s * p).collect();
                gl[*target] -= s;
                vec![(*logits, Tensor::from_parts(1, gl.len(), gl))]
            }
            Op::GinAggregate { x, eps, adj } => {
                let xv = val(*x);
                let (n, m) = (xv.rows(), xv.cols());
                let e = 1.0 + val(*eps).item();
                let gd = g.data();
                let mut gx = vec![0.0; n * m];
                let mut geps = 0.0;
                for (i, nbrs) in adj.iter().enumerate() {
                    let grow = &gd[i * m..(i + 1) * m];
                    let xrow = &xv.data()[i * m..(i + 1) * m];
                    geps += grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                    for (o, v) in gx[i * m..(i + 1) * m].iter_mut().zip(grow) {
                        *o += e * v;
                    }
                    // x_j feeds row i for each neighbour j of i
                    for &j in nbrs {
                        for (o, v) in gx[j * m..(j + 1) * m].iter_mut().zip(grow) {
                            *o += v;
                        }
                    }
                }
                vec![(*x, Tensor::from_parts(n, m, gx)), (*eps, Tensor::scalar(geps))]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::ParamGroup;

    #[test]
    fn elementary_values() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::scalar(0.0));
        let s = tape.sigmoid(z);
        assert_eq!(tape.value(s).item(), 0.5);
        let t = tape.tanh(z);
        assert_eq!(tape.value(t).item(), 0.0);
    }

    #[test]
    fn uniform_cross_entropy_is_ln_n() {
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::full(1, 8, 0.3));
        let ce = tape.cross_entropy(l, 5).unwrap();
        assert!((tape.value(ce).item() - 8f64.ln()).abs() < 1e-12);
        assert!((tape.value(ce).item() - 2.0794).abs() < 1e-4);
        assert!(matches!(tape.cross_entropy(l, 8), Err(DiffError::Target(8, 8))));
    }

    #[test]
    fn softmax_rows_normalised() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, -3.0, 700.0], vec![0.0, 0.1, -0.2]]).unwrap());
        let p = tape.softmax_rows(x);
        for r in 0..2 {
            let s: f64 = tape.value(p).row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn quadratic_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("x", ParamGroup::Main, Tensor::scalar(3.0));
        let unused = store.add("u", ParamGroup::Main, Tensor::scalar(1.0));
        let mut tape = Tape::new();
        let x = tape.param(&store, id);
        let _u = tape.param(&store, unused);
        let y = tape.hadamard(x, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(id).unwrap().item(), 6.0);
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.get_or_zero(&store, unused).item(), 0.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(2, 2));
        assert!(matches!(tape.backward(x), Err(DiffError::NonScalarLoss(_))));
    }

    #[test]
    fn shape_mismatches_rejected() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(2, 2));
        assert!(tape.matmul(a, b).is_err());
        assert!(tape.add(a, b).is_err());
        assert!(tape.hadamard(a, b).is_err());
        assert!(tape.slice_cols(a, 2, 2).is_err());
        let c = tape.constant(Tensor::zeros(3, 3));
        assert!(tape.concat_cols(a, c).is_err());
    }

    #[test]
    fn batch_norm_standardises_columns() {
        let mut tape = Tape::new();
        let x = tape.constant(
            Tensor::from_rows(&[vec![10.0, 10.0], vec![20.0, -4.0], vec![70.0, 3.5], vec![-20.0, 0.0]]).unwrap(),
        );
        let g = tape.constant(Tensor::full(1, 2, 1.0));
        let b = tape.constant(Tensor::zeros(1, 2));
        let y = tape.batch_norm(x, g, b, None, None).unwrap();
        let v = tape.value(y);
        for j in 0..2 {
            let col: Vec<f64> = (0..4).map(|i| v.get(i, j)).collect();
            let mean = col.iter().sum::<f64>() / 4.0;
            let var = col.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-6);
            // eps in the denominator shrinks the variance by var/(var+eps)
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn gin_aggregate_examples() {
        let adj: Adjacency = Arc::new(vec![vec![1, 2], vec![0], vec![0]]);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![5.0, 6.0], vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let e = tape.constant(Tensor::scalar(0.0));
        let y = tape.gin_aggregate(x, e, &adj).unwrap();
        assert_eq!(tape.value(y).row(0), &[9.0, 12.0]);

        let iso: Adjacency = Arc::new(vec![vec![]]);
        let x = tape.constant(Tensor::row_vector(vec![2.0, -4.0]));
        let e = tape.constant(Tensor::scalar(0.5));
        let y = tape.gin_aggregate(x, e, &iso).unwrap();
        assert_eq!(tape.value(y).row(0), &[3.0, -6.0]);
    }
}
