//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every forward op in execution order; [`Graph::backward`]
//! walks the tape in reverse. Parameters live in a [`ParamStore`] and are
//! referenced, not copied, by the tape.

use super::tensor::{matmul_a_bt, matmul_at_b, matmul_into};
use super::{NnError, Tensor};

pub type Pid = usize;

/// Named trainable tensors, addressed by insertion index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> Pid {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn get(&self, pid: Pid) -> &Tensor {
        &self.tensors[pid]
    }

    pub fn get_mut(&mut self, pid: Pid) -> &mut Tensor {
        &mut self.tensors[pid]
    }

    pub fn find(&self, name: &str) -> Option<Pid> {
        self.names.iter().position(|n| n == name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

enum Op {
    Const,
    Param(Pid),
    MatMul(Var, Var),
    AddRowVec(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    StackTime(Vec<Var>),
    Gather { pid: Pid, ids: Vec<u32> },
    ConvOneHot { pid: Pid, ids: Vec<u32>, len: usize },
    Conv1d { x: Var, w: Var, len: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Tensor, inv_std: Vec<f64>, train: bool },
    TimePool { x: Var, len: usize, window: usize },
    Reshape(Var),
    ScatterAdd { base: Var, s: Var, ids: Vec<u32>, len: usize },
    SoftmaxXent { logits: Var, targets: Vec<Vec<u32>>, probs: Tensor },
    Sum(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Const => "const",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::AddRowVec(..) => "add_row_vec",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Affine(..) => "affine",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatCols(_) => "concat_cols",
            Op::StackTime(_) => "stack_time",
            Op::Gather { .. } => "gather",
            Op::ConvOneHot { .. } => "conv_one_hot",
            Op::Conv1d { .. } => "conv1d",
            Op::BatchNorm { .. } => "batch_norm",
            Op::TimePool { .. } => "time_pool",
            Op::Reshape(_) => "reshape",
            Op::ScatterAdd { .. } => "scatter_add",
            Op::SoftmaxXent { .. } => "softmax_xent",
            Op::Sum(_) => "sum",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Batch statistics observed by a train-mode batch norm, for running-stat updates.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub const BN_EPS: f64 = 1e-5;

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> NnError {
    NnError::Shape(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match self.nodes[v.0].op {
            Op::Param(pid) => self.params.get(pid),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Name of the first op whose output holds a non-finite value.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.nodes
            .iter()
            .find(|n| !matches!(n.op, Op::Param(_)) && !n.value.all_finite())
            .map(|n| n.op.name())
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Const, false)
    }

    pub fn param(&mut self, pid: Pid) -> Var {
        self.push(Tensor::zeros(&[0]), Op::Param(pid), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let out = self
            .value(a)
            .matmul(self.value(b))
            .map_err(|_| shape_err("matmul", self.value(a).shape(), self.value(b).shape()))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a[r, c] + b[c]` broadcast over rows.
    pub fn add_row_vec(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (_, c) = av.dims2();
        if bv.len() != c {
            return Err(shape_err("add_row_vec", av.shape(), bv.shape()));
        }
        let mut out = av.clone();
        for row in out.data_mut().chunks_mut(c.max(1)) {
            for (o, &x) in row.iter_mut().zip(bv.data()) {
                *o += x;
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::AddRowVec(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("add", av.shape(), bv.shape()));
        }
        let out = av.zip_map(bv, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("mul", av.shape(), bv.shape()));
        }
        let out = av.zip_map(bv, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Elementwise `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(a).map(|x| scale * x + shift);
        let rg = self.rg(a);
        self.push(out, Op::Affine(a, scale), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NnError> {
        let av = self.value(a);
        let (r, c) = av.dims2();
        if start > end || end > c {
            return Err(NnError::Shape(format!("slice_cols {start}..{end} of {:?}", av.shape())));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(r * w);
        for row in av.data().chunks(c) {
            data.extend_from_slice(&row[start..end]);
        }
        let out = Tensor::from_vec(&[r, w], data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceCols(a, start), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let rows = self.value(parts[0]).dims2().0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2();
            if r != rows {
                return Err(shape_err("concat_cols", self.value(parts[0]).shape(), self.value(p).shape()));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let out = Tensor::from_vec(&[rows, total], data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Interleaves `L` per-timestep `[B, D]` matrices into `[B*L, D]` with row `b*L + t`.
    pub fn stack_time(&mut self, steps: &[Var]) -> Result<Var, NnError> {
        let len = steps.len();
        let (b, d) = self.value(steps[0]).dims2();
        for &s in steps {
            if self.value(s).dims2() != (b, d) {
                return Err(shape_err("stack_time", self.value(steps[0]).shape(), self.value(s).shape()));
            }
        }
        let mut data = vec![0.0; b * len * d];
        for (t, &s) in steps.iter().enumerate() {
            let sv = self.value(s).data();
            for i in 0..b {
                data[(i * len + t) * d..(i * len + t + 1) * d].copy_from_slice(&sv[i * d..(i + 1) * d]);
            }
        }
        let out = Tensor::from_vec(&[b * len, d], data)?;
        let rg = steps.iter().any(|&s| self.rg(s));
        Ok(self.push(out, Op::StackTime(steps.to_vec()), rg))
    }

    /// Rows `ids` of parameter matrix `pid`; equals `one_hot(ids) x W`.
    pub fn gather(&mut self, pid: Pid, ids: &[u32]) -> Result<Var, NnError> {
        let w = self.params.get(pid);
        let (v, d) = w.dims2();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id as usize >= v {
                return Err(NnError::Shape(format!("gather: id {id} >= {v} rows")));
            }
            data.extend_from_slice(w.row(id as usize));
        }
        let out = Tensor::from_vec(&[ids.len(), d], data)?;
        Ok(self.push(out, Op::Gather { pid, ids: ids.to_vec() }, true))
    }

    /// Same-padded 1-D convolution over one-hot rows: kernel param `[k, V, Cout]`,
    /// `ids` laid out as `b*len + t`. Output `[B*len, Cout]`.
    pub fn conv_one_hot(&mut self, pid: Pid, ids: &[u32], len: usize) -> Result<Var, NnError> {
        let w = self.params.get(pid);
        let [k, v, cout] = *w.shape() else {
            return Err(NnError::Shape(format!("conv_one_hot kernel must be 3-D, got {:?}", w.shape())));
        };
        if k % 2 == 0 || len == 0 || !ids.len().is_multiple_of(len) {
            return Err(NnError::Shape(format!(
                "conv_one_hot: kernel {k} with {} ids and length {len}",
                ids.len()
            )));
        }
        let half = k / 2;
        let batch = ids.len() / len;
        let wd = w.data();
        let mut data = vec![0.0; ids.len() * cout];
        for b in 0..batch {
            for t in 0..len {
                let orow = &mut data[(b * len + t) * cout..(b * len + t + 1) * cout];
                for j in 0..k {
                    let Some(src) = (t + j).checked_sub(half).filter(|&s| s < len) else { continue };
                    let id = ids[b * len + src] as usize;
                    if id >= v {
                        return Err(NnError::Shape(format!("conv_one_hot: id {id} >= {v}")));
                    }
                    let krow = &wd[(j * v + id) * cout..(j * v + id + 1) * cout];
                    for (o, &x) in orow.iter_mut().zip(krow) {
                        *o += x;
                    }
                }
            }
        }
        let out = Tensor::from_vec(&[ids.len(), cout], data)?;
        Ok(self.push(out, Op::ConvOneHot { pid, ids: ids.to_vec(), len }, true))
    }

    /// Same-padded 1-D cross-correlation: `x [B*len, Cin]`, `w [k, Cin, Cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, len: usize) -> Result<Var, NnError> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (rows, cin) = xv.dims2();
        let [k, wcin, cout] = *wv.shape() else {
            return Err(shape_err("conv1d", xv.shape(), wv.shape()));
        };
        if wcin != cin || k % 2 == 0 || len == 0 || rows % len != 0 {
            return Err(shape_err("conv1d", xv.shape(), wv.shape()));
        }
        let mut out = vec![0.0; rows * cout];
        conv_forward(xv.data(), wv.data(), &mut out, rows / len, len, k, cin, cout);
        let out = Tensor::from_vec(&[rows, cout], out)?;
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(out, Op::Conv1d { x, w, len }, rg))
    }

    /// Per-column normalization of `x [R, C]`. Train mode uses batch
    /// statistics (returned for running-stat updates); infer mode uses `running`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: Mode,
        running: &BatchStats,
    ) -> Result<(Var, BatchStats), NnError> {
        let xv = self.value(x);
        let (r, c) = xv.dims2();
        if self.value(gamma).len() != c || self.value(beta).len() != c || running.mean.len() != c {
            return Err(shape_err("batch_norm", xv.shape(), self.value(gamma).shape()));
        }
        let stats = match mode {
            Mode::Train => {
                if r == 0 {
                    return Err(NnError::Shape("batch_norm: empty batch".into()));
                }
                let mut mean = vec![0.0; c];
                for row in xv.data().chunks(c) {
                    for (m, &v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= r as f64);
                let mut var = vec![0.0; c];
                for row in xv.data().chunks(c) {
                    for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= r as f64);
                BatchStats { mean, var }
            }
            Mode::Infer => running.clone(),
        };
        let inv_std: Vec<f64> = stats.var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = xv.clone();
        for row in xhat.data_mut().chunks_mut(c) {
            for j in 0..c {
                row[j] = (row[j] - stats.mean[j]) * inv_std[j];
            }
        }
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = xhat.clone();
        for row in out.data_mut().chunks_mut(c) {
            for j in 0..c {
                row[j] = row[j] * g[j] + bt[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train: mode == Mode::Train,
        };
        Ok((self.push(out, op, rg), stats))
    }

    /// Non-overlapping mean over time windows. `x [B*len, C]` becomes
    /// `[B*(len/window), C]`; `window == len` is global average pooling.
    pub fn time_pool(&mut self, x: Var, len: usize, window: usize) -> Result<Var, NnError> {
        let xv = self.value(x);
        let (rows, c) = xv.dims2();
        if window == 0 || window > len || rows % len != 0 {
            return Err(NnError::Shape(format!(
                "time_pool: window {window} over length {len} on {:?}",
                xv.shape()
            )));
        }
        let batch = rows / len;
        let p = len / window;
        let mut out = vec![0.0; batch * p * c];
        let scale = 1.0 / window as f64;
        for b in 0..batch {
            for q in 0..p {
                let orow = &mut out[(b * p + q) * c..(b * p + q + 1) * c];
                for i in 0..window {
                    let r = b * len + q * window + i;
                    for (o, &v) in orow.iter_mut().zip(&xv.data()[r * c..(r + 1) * c]) {
                        *o += v * scale;
                    }
                }
            }
        }
        let out = Tensor::from_vec(&[batch * p, c], out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::TimePool { x, len, window }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NnError> {
        let out = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// `base [B, V]` plus, for every position `r = b*len + t`, `s[r]` added at column `ids[r]`.
    pub fn scatter_add(&mut self, base: Var, s: Var, ids: &[u32], len: usize) -> Result<Var, NnError> {
        let (bv, sv) = (self.value(base), self.value(s));
        let (b, v) = bv.dims2();
        if sv.len() != ids.len() || ids.len() != b * len {
            return Err(shape_err("scatter_add", bv.shape(), sv.shape()));
        }
        let mut out = bv.clone();
        for (r, &id) in ids.iter().enumerate() {
            if id as usize >= v {
                return Err(NnError::Shape(format!("scatter_add: id {id} >= {v}")));
            }
            out.data_mut()[(r / len) * v + id as usize] += sv.data()[r];
        }
        let rg = self.rg(base) || self.rg(s);
        Ok(self.push(
            out,
            Op::ScatterAdd {
                base,
                s,
                ids: ids.to_vec(),
                len,
            },
            rg,
        ))
    }

    /// Mean categorical cross-entropy of row-wise softmax against `targets`.
    pub fn softmax_xent(&mut self, logits: Var, targets: &[u32]) -> Result<Var, NnError> {
        let sets: Vec<Vec<u32>> = targets.iter().map(|&t| vec![t]).collect();
        self.softmax_xent_sets(logits, sets)
    }

    /// Cross-entropy where row `r` is correct when any column in `targets[r]`
    /// is chosen: loss is `-ln` of the summed softmax mass over that set.
    pub fn softmax_xent_sets(&mut self, logits: Var, targets: Vec<Vec<u32>>) -> Result<Var, NnError> {
        let lv = self.value(logits);
        let (b, v) = lv.dims2();
        if targets.len() != b {
            return Err(NnError::Shape(format!(
                "softmax_xent: {} targets for {b} rows",
                targets.len()
            )));
        }
        let mut probs = lv.clone();
        let mut loss = 0.0;
        for (row, set) in probs.data_mut().chunks_mut(v).zip(&targets) {
            if set.is_empty() {
                return Err(NnError::Shape("softmax_xent: empty target set".into()));
            }
            if let Some(t) = set.iter().find(|&&t| t as usize >= v) {
                return Err(NnError::Shape(format!("softmax_xent: target {t} >= {v}")));
            }
            softmax_in_place(row);
            let mass: f64 = set.iter().map(|&t| row[t as usize]).sum();
            loss -= mass.max(f64::MIN_POSITIVE).ln();
        }
        let out = Tensor::scalar(loss / b as f64);
        let rg = self.rg(logits);
        Ok(self.push(out, Op::SoftmaxXent { logits, targets, probs }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    /// Probabilities computed by a softmax-xent node.
    pub fn probs(&self, v: Var) -> Option<&Tensor> {
        match &self.nodes[v.0].op {
            Op::SoftmaxXent { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Reverse pass from scalar `loss`. Returns gradients aligned with the
    /// parameter store; parameters not reached get zeros.
    pub fn backward(&self, loss: Var) -> Vec<Tensor> {
        let mut pgrads = self.params.zeros_like();
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(node, g, &mut grads, &mut pgrads);
        }
        pgrads
    }

    fn backprop_node(&self, node: &Node, g: Tensor, grads: &mut [Option<Tensor>], pgrads: &mut [Tensor]) {
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(e) => e.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Const => {}
            Op::Param(pid) => pgrads[*pid].add_assign(&g),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k) = av.dims2();
                let (_, m) = bv.dims2();
                if self.rg(*a) {
                    let mut da = vec![0.0; n * k];
                    matmul_a_bt(g.data(), bv.data(), &mut da, n, k, m);
                    acc(*a, Tensor::from_vec(av.shape(), da).unwrap());
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; k * m];
                    matmul_at_b(av.data(), g.data(), &mut db, n, k, m);
                    acc(*b, Tensor::from_vec(bv.shape(), db).unwrap());
                }
            }
            Op::AddRowVec(a, b) => {
                let bv = self.value(*b);
                let mut db = vec![0.0; bv.len()];
                for row in g.data().chunks(bv.len().max(1)) {
                    for (d, &x) in db.iter_mut().zip(row) {
                        *d += x;
                    }
                }
                acc(*b, Tensor::from_vec(bv.shape(), db).unwrap());
                acc(*a, g);
            }
            Op::Add(a, b) => {
                acc(*b, g.clone());
                acc(*a, g);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    acc(*a, g.zip_map(bv, |x, y| x * y));
                }
                if self.rg(*b) {
                    acc(*b, g.zip_map(av, |x, y| x * y));
                }
            }
            Op::Affine(a, scale) => acc(*a, g.scale(*scale)),
            Op::Sigmoid(a) => acc(*a, g.zip_map(&node.value, |d, y| d * y * (1.0 - y))),
            Op::Tanh(a) => acc(*a, g.zip_map(&node.value, |d, y| d * (1.0 - y * y))),
            Op::SliceCols(a, start) => {
                let av = self.value(*a);
                let (r, c) = av.dims2();
                let (_, w) = g.dims2();
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    da[i * c + start..i * c + start + w].copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                }
                acc(*a, Tensor::from_vec(av.shape(), da).unwrap());
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = g.dims2();
                let mut off = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let (_, w) = pv.dims2();
                    if self.rg(p) {
                        let mut dp = Vec::with_capacity(rows * w);
                        for i in 0..rows {
                            dp.extend_from_slice(&g.data()[i * total + off..i * total + off + w]);
                        }
                        acc(p, Tensor::from_vec(pv.shape(), dp).unwrap());
                    }
                    off += w;
                }
            }
            Op::StackTime(steps) => {
                let len = steps.len();
                let (rows, d) = g.dims2();
                let b = rows / len;
                for (t, &s) in steps.iter().enumerate() {
                    if !self.rg(s) {
                        continue;
                    }
                    let mut ds = vec![0.0; b * d];
                    for i in 0..b {
                        ds[i * d..(i + 1) * d].copy_from_slice(&g.data()[(i * len + t) * d..(i * len + t + 1) * d]);
                    }
                    acc(s, Tensor::from_vec(self.value(s).shape(), ds).unwrap());
                }
            }
            Op::Gather { pid, ids } => {
                let (_, d) = g.dims2();
                let pg = pgrads[*pid].data_mut();
                for (r, &id) in ids.iter().enumerate() {
                    let dst = &mut pg[id as usize * d..(id as usize + 1) * d];
                    for (o, &x) in dst.iter_mut().zip(&g.data()[r * d..(r + 1) * d]) {
                        *o += x;
                    }
                }
            }
            Op::ConvOneHot { pid, ids, len } => {
                let [k, v, cout] = *self.params.get(*pid).shape() else { unreachable!() };
                let half = k / 2;
                let batch = ids.len() / len;
                let pg = pgrads[*pid].data_mut();
                for b in 0..batch {
                    for t in 0..*len {
                        let grow = &g.data()[(b * len + t) * cout..(b * len + t + 1) * cout];
                        for j in 0..k {
                            let Some(src) = (t + j).checked_sub(half).filter(|s| s < len) else { continue };
                            let id = ids[b * len + src] as usize;
                            let dst = &mut pg[(j * v + id) * cout..(j * v + id + 1) * cout];
                            for (o, &x) in dst.iter_mut().zip(grow) {
                                *o += x;
                            }
                        }
                    }
                }
            }
            Op::Conv1d { x, w, len } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (rows, cin) = xv.dims2();
                let [k, _, cout] = *wv.shape() else { unreachable!() };
                let batch = rows / len;
                if self.rg(*x) {
                    let mut dx = vec![0.0; rows * cin];
                    conv_backward_input(g.data(), wv.data(), &mut dx, batch, *len, k, cin, cout);
                    acc(*x, Tensor::from_vec(xv.shape(), dx).unwrap());
                }
                if self.rg(*w) {
                    let mut dw = vec![0.0; k * cin * cout];
                    conv_backward_kernel(xv.data(), g.data(), &mut dw, batch, *len, k, cin, cout);
                    acc(*w, Tensor::from_vec(wv.shape(), dw).unwrap());
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (r, c) = g.dims2();
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for (grow, hrow) in g.data().chunks(c).zip(xhat.data().chunks(c)) {
                    for j in 0..c {
                        dgamma[j] += grow[j] * hrow[j];
                        dbeta[j] += grow[j];
                    }
                }
                if self.rg(*x) {
                    let mut dx = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            let gi = g.data()[i * c + j];
                            dx[i * c + j] = if *train {
                                let n = r as f64;
                                gam[j] * inv_std[j] / n * (n * gi - dbeta[j] - xhat.data()[i * c + j] * dgamma[j])
                            } else {
                                gam[j] * inv_std[j] * gi
                            };
                        }
                    }
                    acc(*x, Tensor::from_vec(self.value(*x).shape(), dx).unwrap());
                }
                acc(*gamma, Tensor::from_vec(self.value(*gamma).shape(), dgamma).unwrap());
                acc(*beta, Tensor::from_vec(self.value(*beta).shape(), dbeta).unwrap());
            }
            Op::TimePool { x, len, window } => {
                let xv = self.value(*x);
                let (rows, c) = xv.dims2();
                let batch = rows / len;
                let p = len / window;
                let scale = 1.0 / *window as f64;
                let mut dx = vec![0.0; rows * c];
                for b in 0..batch {
                    for q in 0..p {
                        let grow = &g.data()[(b * p + q) * c..(b * p + q + 1) * c];
                        for i in 0..*window {
                            let r = b * len + q * window + i;
                            for (o, &d) in dx[r * c..(r + 1) * c].iter_mut().zip(grow) {
                                *o += d * scale;
                            }
                        }
                    }
                }
                acc(*x, Tensor::from_vec(xv.shape(), dx).unwrap());
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                acc(*a, g.reshape(&shape).unwrap());
            }
            Op::ScatterAdd { base, s, ids, len } => {
                let (_, v) = g.dims2();
                if self.rg(*s) {
                    let ds: Vec<f64> = ids
                        .iter()
                        .enumerate()
                        .map(|(r, &id)| g.data()[(r / len) * v + id as usize])
                        .collect();
                    acc(*s, Tensor::from_vec(self.value(*s).shape(), ds).unwrap());
                }
                acc(*base, g);
            }
            Op::SoftmaxXent { logits, targets, probs } => {
                let (b, v) = probs.dims2();
                let scale = g.data()[0] / b as f64;
                let mut d = probs.scale(scale);
                for (i, set) in targets.iter().enumerate() {
                    // d/dz of -ln sum_T p = p - p restricted to T and renormalized
                    let row = &probs.data()[i * v..(i + 1) * v];
                    let mass: f64 = set.iter().map(|&t| row[t as usize]).sum::<f64>().max(f64::MIN_POSITIVE);
                    for &t in set {
                        d.data_mut()[i * v + t as usize] -= scale * row[t as usize] / mass;
                    }
                }
                acc(*logits, d);
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape().to_vec();
                acc(*a, Tensor::full(&shape, g.data()[0]));
            }
        }
    }
}

impl std::fmt::Debug for Graph<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Graph")
            .field("nodes", &self.nodes.len())
            .finish()
    }
}

/// Stable softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        z += *x;
    }
    for x in row.iter_mut() {
        *x /= z;
    }
}

/// Valid output rows `[t0, t1)` for kernel tap `j` (source row `t + j - half`).
fn tap_range(j: usize, half: usize, len: usize) -> (usize, usize) {
    let t0 = half.saturating_sub(j);
    let t1 = (len + half).saturating_sub(j).min(len);
    (t0, t1.max(t0))
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(x: &[f64], w: &[f64], out: &mut [f64], batch: usize, len: usize, k: usize, cin: usize, cout: usize) {
    let half = k / 2;
    for j in 0..k {
        let (t0, t1) = tap_range(j, half, len);
        let wj = &w[j * cin * cout..(j + 1) * cin * cout];
        for b in 0..batch {
            let src = b * len + t0 + j - half;
            let n = t1 - t0;
            matmul_into(
                &x[src * cin..(src + n) * cin],
                wj,
                &mut out[(b * len + t0) * cout..(b * len + t1) * cout],
                n,
                cin,
                cout,
            );
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward_input(g: &[f64], w: &[f64], dx: &mut [f64], batch: usize, len: usize, k: usize, cin: usize, cout: usize) {
    let half = k / 2;
    for j in 0..k {
        let (t0, t1) = tap_range(j, half, len);
        let wj = &w[j * cin * cout..(j + 1) * cin * cout];
        for b in 0..batch {
            let src = b * len + t0 + j - half;
            let n = t1 - t0;
            matmul_a_bt(
                &g[(b * len + t0) * cout..(b * len + t1) * cout],
                wj,
                &mut dx[src * cin..(src + n) * cin],
                n,
                cin,
                cout,
            );
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward_kernel(x: &[f64], g: &[f64], dw: &mut [f64], batch: usize, len: usize, k: usize, cin: usize, cout: usize) {
    let half = k / 2;
    for j in 0..k {
        let (t0, t1) = tap_range(j, half, len);
        let dwj = &mut dw[j * cin * cout..(j + 1) * cin * cout];
        for b in 0..batch {
            let src = b * len + t0 + j - half;
            let n = t1 - t0;
            matmul_at_b(
                &x[src * cin..(src + n) * cin],
                &g[(b * len + t0) * cout..(b * len + t1) * cout],
                dwj,
                n,
                cin,
                cout,
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_param_has_unit_gradient() {
        let mut ps = ParamStore::new();
        let w = ps.add("w", Tensor::matrix(&[&[1.0, -2.0], &[3.0, 4.0]]));
        let unused = ps.add("unused", Tensor::vector(&[5.0]));
        let mut g = Graph::new(&ps);
        let wv = g.param(w);
        let s = g.sum(wv);
        let grads = g.backward(s);
        assert_eq!(grads[w].data(), &[1.0; 4]);
        assert_eq!(grads[unused].data(), &[0.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut ps = ParamStore::new();
        let w = ps.add("w", Tensor::vector(&[1.0, 2.0]));
        let mut g = Graph::new(&ps);
        let _ = g.param(w);
        let c = g.constant(Tensor::vector(&[3.0, 4.0]));
        let s = g.sum(c);
        assert_eq!(g.backward(s)[w].data(), &[0.0, 0.0]);
    }

    #[test]
    fn gather_matches_one_hot_matmul() {
        let mut ps = ParamStore::new();
        let data: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let w = ps.add("w", Tensor::from_vec(&[5, 4], data).unwrap());
        let ids = [3u32, 0, 4, 4];
        let mut g = Graph::new(&ps);
        let a = g.gather(w, &ids).unwrap();
        let oh = crate::textprep::one_hot(&ids, 5).unwrap();
        let oh = g.constant(oh);
        let wv = g.param(w);
        let b = g.matmul(oh, wv).unwrap();
        let diff = g.value(a).zip_map(g.value(b), |x, y| (x - y).abs()).max_abs();
        assert!(diff <= 1e-12);
    }

    #[test]
    fn conv_one_hot_matches_dense_conv() {
        let mut ps = ParamStore::new();
        let (k, v, cout, len) = (3, 6, 2, 4);
        let data: Vec<f64> = (0..k * v * cout).map(|i| (i as f64 * 0.71).cos()).collect();
        let w = ps.add("w", Tensor::from_vec(&[k, v, cout], data).unwrap());
        let ids = [1u32, 5, 0, 2, 3, 3, 4, 1];
        let mut g = Graph::new(&ps);
        let a = g.conv_one_hot(w, &ids, len).unwrap();
        let x = g.constant(crate::textprep::one_hot(&ids, v).unwrap());
        let wv = g.param(w);
        let b = g.conv1d(x, wv, len).unwrap();
        let diff = g.value(a).zip_map(g.value(b), |x, y| (x - y).abs()).max_abs();
        assert!(diff <= 1e-12);
    }

    #[test]
    fn set_xent_gradient_and_singleton_agreement() {
        let mut ps = ParamStore::new();
        let data: Vec<f64> = (0..12).map(|i| (i as f64 * 0.53).sin()).collect();
        let w = ps.add("w", Tensor::from_vec(&[2, 6], data).unwrap());
        let sets = vec![vec![1u32, 4, 5], vec![2]];
        let loss = |ps: &ParamStore| -> Result<f64, NnError> {
            let mut g = Graph::new(ps);
            let x = g.param(w);
            let l = g.softmax_xent_sets(x, sets.clone())?;
            Ok(g.value(l).data()[0])
        };
        let grad = |ps: &ParamStore| -> Result<Vec<Tensor>, NnError> {
            let mut g = Graph::new(ps);
            let x = g.param(w);
            let l = g.softmax_xent_sets(x, sets.clone())?;
            Ok(g.backward(l))
        };
        let r = crate::nncore::gradcheck::check_gradients(&ps, loss, grad, 1e-5, 1e-6, 1).unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");

        let mut g = Graph::new(&ps);
        let x = g.param(w);
        let a = g.softmax_xent(x, &[3, 0]).unwrap();
        let b = g.softmax_xent_sets(x, vec![vec![3], vec![0]]).unwrap();
        assert_eq!(g.value(a).data(), g.value(b).data());
        assert!(g.softmax_xent_sets(x, vec![vec![], vec![0]]).is_err());
    }
}
