//! Reverse-mode differentiation over a flat operation record.
//!
//! Every operation appends a node holding its forward value. [`Tape::backward`]
//! walks the nodes in exact reverse order of creation and accumulates
//! adjoints. Nodes that cannot reach a parameter are never differentiated.

use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use super::tensor::{self, shape_error, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node recorded on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param,
    MatVec(usize, usize),
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Concat(Vec<usize>),
    StackRows(Vec<usize>),
    Row(usize, usize),
    Slice(usize, usize),
    MeanRange(usize, usize, usize),
    Sum(usize),
    Dot(usize, usize),
    Index(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    MaskedSoftmax(usize),
    LogSoftmaxAt(usize, Option<Vec<bool>>, usize),
    StraightThrough(usize),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Single-owner record of one forward computation.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    params: Vec<(usize, usize)>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Provenance);
        }
        Ok(v.index)
    }

    fn grad(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    /// Forward value of a node.
    ///
    /// Panics if `v` was recorded on another tape.
    pub fn value(&self, v: Var) -> &Tensor {
        let i = self.idx(v).expect("variable recorded on a different tape");
        &self.nodes[i].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Registers trainable tensor `id`. Each id may be registered once.
    pub fn param(&mut self, id: usize, value: &Tensor) -> Result<Var> {
        if self.params.iter().any(|&(p, _)| p == id) {
            return Err(Error::DuplicateParam(id));
        }
        let v = self.push(value.clone(), Op::Param, true);
        self.params.push((id, v.index));
        Ok(v)
    }

    pub fn matvec(&mut self, w: Var, v: Var) -> Result<Var> {
        let (a, b) = (self.idx(w)?, self.idx(v)?);
        let out = tensor::matvec(&self.nodes[a].value, &self.nodes[b].value)?;
        let g = self.grad(a) || self.grad(b);
        Ok(self.push(out, Op::MatVec(a, b), g))
    }

    pub fn matmul(&mut self, x: Var, y: Var) -> Result<Var> {
        let (a, b) = (self.idx(x)?, self.idx(y)?);
        let out = tensor::matmul(&self.nodes[a].value, &self.nodes[b].value)?;
        let g = self.grad(a) || self.grad(b);
        Ok(self.push(out, Op::MatMul(a, b), g))
    }

    fn zip_with(
        &mut self,
        x: Var,
        y: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(usize, usize, Tensor)> {
        let (a, b) = (self.idx(x)?, self.idx(y)?);
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        if ta.shape() != tb.shape() {
            return Err(shape_error(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(p, q)| f(*p, *q)).collect();
        Ok((a, b, Tensor::new(ta.shape().to_vec(), data)?))
    }

    pub fn add(&mut self, x: Var, y: Var) -> Result<Var> {
        let (a, b, out) = self.zip_with(x, y, "add", |p, q| p + q)?;
        let g = self.grad(a) || self.grad(b);
        Ok(self.push(out, Op::Add(a, b), g))
    }

    pub fn sub(&mut self, x: Var, y: Var) -> Result<Var> {
        let (a, b, out) = self.zip_with(x, y, "sub", |p, q| p - q)?;
        let g = self.grad(a) || self.grad(b);
        Ok(self.push(out, Op::Sub(a, b), g))
    }

    pub fn mul(&mut self, x: Var, y: Var) -> Result<Var> {
        let (a, b, out) = self.zip_with(x, y, "mul", |p, q| p * q)?;
        let g = self.grad(a) || self.grad(b);
        Ok(self.push(out, Op::Mul(a, b), g))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        let a = self.idx(x)?;
        let mut out = self.nodes[a].value.clone();
        out.scale_in_place(k);
        let g = self.grad(a);
        Ok(self.push(out, Op::Scale(a, k), g))
    }

    /// Concatenates scalars and vectors into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut idx = Vec::with_capacity(parts.len());
        let mut data = Vec::new();
        let mut g = false;
        for &p in parts {
            let i = self.idx(p)?;
            let t = &self.nodes[i].value;
            if t.rank() > 1 {
                return Err(Error::Shape {
                    op: "concat",
                    left: t.shape().to_vec(),
                    right: vec![],
                });
            }
            data.extend_from_slice(t.data());
            g |= self.grad(i);
            idx.push(i);
        }
        Ok(self.push(Tensor::vector(data), Op::Concat(idx), g))
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("stack_rows"));
        }
        let first = self.idx(rows[0])?;
        let width = self.nodes[first].value.len();
        let mut idx = Vec::with_capacity(rows.len());
        let mut data = Vec::with_capacity(width * rows.len());
        let mut g = false;
        for &r in rows {
            let i = self.idx(r)?;
            let t = &self.nodes[i].value;
            if t.rank() != 1 || t.len() != width {
                return Err(shape_error("stack_rows", &self.nodes[first].value, t));
            }
            data.extend_from_slice(t.data());
            g |= self.grad(i);
            idx.push(i);
        }
        let out = Tensor::matrix(rows.len(), width, data)?;
        Ok(self.push(out, Op::StackRows(idx), g))
    }

    pub fn row(&mut self, m: Var, r: usize) -> Result<Var> {
        let a = self.idx(m)?;
        let t = &self.nodes[a].value;
        if t.rank() != 2 {
            return Err(shape_error("row", t, t));
        }
        if r >= t.rows() {
            return Err(Error::Index {
                index: r,
                len: t.rows(),
            });
        }
        let out = Tensor::vector(t.row(r).to_vec());
        let g = self.grad(a);
        Ok(self.push(out, Op::Row(a, r), g))
    }

    /// Contiguous sub-vector `[start, start + len)`.
    pub fn slice(&mut self, v: Var, start: usize, len: usize) -> Result<Var> {
        let a = self.idx(v)?;
        let t = &self.nodes[a].value;
        if t.rank() != 1 || start + len > t.len() {
            return Err(Error::Index {
                index: start + len,
                len: t.len(),
            });
        }
        let out = Tensor::vector(t.data()[start..start + len].to_vec());
        let g = self.grad(a);
        Ok(self.push(out, Op::Slice(a, start), g))
    }

    /// Mean over the index range `[start, end)`: rows of a matrix (giving a
    /// vector) or elements of a vector (giving a scalar).
    pub fn mean_range(&mut self, v: Var, start: usize, end: usize) -> Result<Var> {
        let a = self.idx(v)?;
        let t = &self.nodes[a].value;
        let n = if t.rank() == 2 { t.rows() } else { t.len() };
        if start >= end || end > n {
            return Err(Error::Index { index: end, len: n });
        }
        let k = (end - start) as f64;
        let out = if t.rank() == 2 {
            let mut acc = vec![0.0; t.cols()];
            for r in start..end {
                for (o, x) in acc.iter_mut().zip(t.row(r)) {
                    *o += x;
                }
            }
            for o in &mut acc {
                *o /= k;
            }
            Tensor::vector(acc)
        } else {
            Tensor::scalar(t.data()[start..end].iter().sum::<f64>() / k)
        };
        let g = self.grad(a);
        Ok(self.push(out, Op::MeanRange(a, start, end), g))
    }

    pub fn sum(&mut self, v: Var) -> Result<Var> {
        let a = self.idx(v)?;
        let out = Tensor::scalar(self.nodes[a].value.data().iter().sum());
        let g = self.grad(a);
        Ok(self.push(out, Op::Sum(a), g))
    }

    pub fn dot(&mut self, x: Var, y: Var) -> Result<Var> {
        let (a, b) = (self.idx(x)?, self.idx(y)?);
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        if ta.rank() != 1 || ta.shape() != tb.shape() {
            return Err(shape_error("dot", ta, tb));
        }
        let out = Tensor::scalar(tensor::dot(ta.data(), tb.data()));
        let g = self.grad(a) || self.grad(b);
        Ok(self.push(out, Op::Dot(a, b), g))
    }

    /// Element `i` of a vector as a scalar.
    pub fn index(&mut self, v: Var, i: usize) -> Result<Var> {
        let a = self.idx(v)?;
        let t = &self.nodes[a].value;
        if i >= t.len() {
            return Err(Error::Index { index: i, len: t.len() });
        }
        let out = Tensor::scalar(t.data()[i]);
        let g = self.grad(a);
        Ok(self.push(out, Op::Index(a, i), g))
    }

    fn map(&mut self, v: Var, f: impl Fn(f64) -> f64) -> Result<(usize, Tensor)> {
        let a = self.idx(v)?;
        let t = &self.nodes[a].value;
        let data = t.data().iter().map(|x| f(*x)).collect();
        Ok((a, Tensor::new(t.shape().to_vec(), data)?))
    }

    pub fn sigmoid(&mut self, v: Var) -> Result<Var> {
        let (a, out) = self.map(v, tensor::sigmoid)?;
        let g = self.grad(a);
        Ok(self.push(out, Op::Sigmoid(a), g))
    }

    pub fn tanh(&mut self, v: Var) -> Result<Var> {
        let (a, out) = self.map(v, libm::tanh)?;
        let g = self.grad(a);
        Ok(self.push(out, Op::Tanh(a), g))
    }

    pub fn exp(&mut self, v: Var) -> Result<Var> {
        let (a, out) = self.map(v, libm::exp)?;
        let g = self.grad(a);
        Ok(self.push(out, Op::Exp(a), g))
    }

    pub fn log(&mut self, v: Var) -> Result<Var> {
        let (a, out) = self.map(v, libm::log)?;
        let g = self.grad(a);
        Ok(self.push(out, Op::Log(a), g))
    }

    pub fn masked_softmax(&mut self, scores: Var, valid: &[bool]) -> Result<Var> {
        let a = self.idx(scores)?;
        let out = tensor::masked_softmax(self.nodes[a].value.data(), valid)?;
        let g = self.grad(a);
        Ok(self.push(Tensor::vector(out), Op::MaskedSoftmax(a), g))
    }

    /// Scalar `log softmax(scores)[index]`, restricted to `valid` positions.
    pub fn log_softmax_at(&mut self, scores: Var, valid: Option<&[bool]>, index: usize) -> Result<Var> {
        let a = self.idx(scores)?;
        let out = tensor::log_softmax_at(self.nodes[a].value.data(), valid, index)?;
        let g = self.grad(a);
        Ok(self.push(
            Tensor::scalar(out),
            Op::LogSoftmaxAt(a, valid.map(|m| m.to_vec()), index),
            g,
        ))
    }

    /// Binary sample whose backward pass substitutes the sigmoid derivative
    /// at the scalar pre-activation `pre`.
    pub fn straight_through(&mut self, pre: Var, sample: bool) -> Result<Var> {
        let a = self.idx(pre)?;
        if self.nodes[a].value.len() != 1 {
            let t = &self.nodes[a].value;
            return Err(shape_error("straight_through", t, t));
        }
        let out = Tensor::scalar(if sample { 1.0 } else { 0.0 });
        let g = self.grad(a);
        Ok(self.push(out, Op::StraightThrough(a), g))
    }

    /// Reverse pass from a scalar `loss`. The tape is left untouched, so
    /// repeated calls return identical gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self.idx(loss)?;
        if self.nodes[root].value.len() != 1 {
            let t = &self.nodes[root].value;
            return Err(shape_error("backward", t, t));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; root + 1];
        adj[root] = Some(Tensor::new(self.nodes[root].value.shape().to_vec(), vec![1.0])?);

        for i in (0..=root).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj);
            adj[i] = Some(g);
        }

        let mut params = Vec::with_capacity(self.params.len());
        for &(id, node) in &self.params {
            if node < adj.len() && adj[node].is_none() {
                adj[node] = Some(Tensor::zeros(self.nodes[node].value.shape()));
            }
            params.push((id, node));
        }
        Ok(Gradients {
            tape: self.id,
            adjoints: adj,
            params,
            shapes: self
                .params
                .iter()
                .map(|&(_, n)| self.nodes[n].value.shape().to_vec())
                .collect(),
        })
    }

    fn propagate(&self, i: usize, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let val = |j: usize| &nodes[j].value;
        let wants = |j: usize| nodes[j].needs_grad;
        match &nodes[i].op {
            Op::Constant | Op::Param => {}
            Op::MatVec(w, v) => {
                let (wt, vt) = (val(*w), val(*v));
                let cols = wt.cols();
                if wants(*w) {
                    let gw = slot(adj, *w, wt.shape());
                    for (r, gr) in g.data().iter().enumerate() {
                        if *gr == 0.0 {
                            continue;
                        }
                        for (o, x) in gw.data_mut()[r * cols..(r + 1) * cols].iter_mut().zip(vt.data()) {
                            *o += gr * x;
                        }
                    }
                }
                if wants(*v) {
                    let gv = slot(adj, *v, vt.shape());
                    for (r, gr) in g.data().iter().enumerate() {
                        for (o, x) in gv.data_mut().iter_mut().zip(wt.row(r)) {
                            *o += gr * x;
                        }
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
                if wants(*a) {
                    // dA = G B^T
                    let ga = slot(adj, *a, ta.shape());
                    for r in 0..n {
                        for p in 0..k {
                            let s = tensor::dot(&g.data()[r * m..(r + 1) * m], tb.row(p));
                            ga.data_mut()[r * k + p] += s;
                        }
                    }
                }
                if wants(*b) {
                    // dB = A^T G
                    let gb = slot(adj, *b, tb.shape());
                    for r in 0..n {
                        for p in 0..k {
                            let x = ta.data()[r * k + p];
                            for (o, gv) in gb.data_mut()[p * m..(p + 1) * m]
                                .iter_mut()
                                .zip(&g.data()[r * m..(r + 1) * m])
                            {
                                *o += x * gv;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    slot(adj, *a, g.shape()).add_assign(g);
                }
                if wants(*b) {
                    slot(adj, *b, g.shape()).add_assign(g);
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    slot(adj, *a, g.shape()).add_assign(g);
                }
                if wants(*b) {
                    let gb = slot(adj, *b, g.shape());
                    for (o, x) in gb.data_mut().iter_mut().zip(g.data()) {
                        *o -= x;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if wants(*a) {
                    let ga = slot(adj, *a, ta.shape());
                    for ((o, x), y) in ga.data_mut().iter_mut().zip(g.data()).zip(tb.data()) {
                        *o += x * y;
                    }
                }
                if wants(*b) {
                    let gb = slot(adj, *b, tb.shape());
                    for ((o, x), y) in gb.data_mut().iter_mut().zip(g.data()).zip(ta.data()) {
                        *o += x * y;
                    }
                }
            }
            Op::Scale(a, k) => {
                let ga = slot(adj, *a, g.shape());
                for (o, x) in ga.data_mut().iter_mut().zip(g.data()) {
                    *o += k * x;
                }
            }
            Op::Concat(parts) | Op::StackRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = val(p).len();
                    if wants(p) {
                        let gp = slot(adj, p, val(p).shape());
                        for (o, x) in gp.data_mut().iter_mut().zip(&g.data()[offset..offset + n]) {
                            *o += x;
                        }
                    }
                    offset += n;
                }
            }
            Op::Row(m, r) => {
                let tm = val(*m);
                let gm = slot(adj, *m, tm.shape());
                for (o, x) in gm.row_mut(*r).iter_mut().zip(g.data()) {
                    *o += x;
                }
            }
            Op::Slice(v, start) => {
                let tv = val(*v);
                let gv = slot(adj, *v, tv.shape());
                for (o, x) in gv.data_mut()[*start..*start + g.len()].iter_mut().zip(g.data()) {
                    *o += x;
                }
            }
            Op::MeanRange(v, start, end) => {
                let tv = val(*v);
                let k = (*end - *start) as f64;
                let gv = slot(adj, *v, tv.shape());
                if tv.rank() == 2 {
                    for r in *start..*end {
                        for (o, x) in gv.row_mut(r).iter_mut().zip(g.data()) {
                            *o += x / k;
                        }
                    }
                } else {
                    let gs = g.item() / k;
                    for o in &mut gv.data_mut()[*start..*end] {
                        *o += gs;
                    }
                }
            }
            Op::Sum(v) => {
                let gs = g.item();
                let gv = slot(adj, *v, val(*v).shape());
                for o in gv.data_mut() {
                    *o += gs;
                }
            }
            Op::Dot(a, b) => {
                let gs = g.item();
                let (ta, tb) = (val(*a), val(*b));
                if wants(*a) {
                    let ga = slot(adj, *a, ta.shape());
                    for (o, y) in ga.data_mut().iter_mut().zip(tb.data()) {
                        *o += gs * y;
                    }
                }
                if wants(*b) {
                    let gb = slot(adj, *b, tb.shape());
                    for (o, x) in gb.data_mut().iter_mut().zip(ta.data()) {
                        *o += gs * x;
                    }
                }
            }
            Op::Index(v, k) => {
                let gv = slot(adj, *v, val(*v).shape());
                gv.data_mut()[*k] += g.item();
            }
            Op::Sigmoid(v) => {
                let y = &nodes[i].value;
                let gv = slot(adj, *v, y.shape());
                for ((o, x), s) in gv.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                    *o += x * s * (1.0 - s);
                }
            }
            Op::Tanh(v) => {
                let y = &nodes[i].value;
                let gv = slot(adj, *v, y.shape());
                for ((o, x), t) in gv.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                    *o += x * (1.0 - t * t);
                }
            }
            Op::Exp(v) => {
                let y = &nodes[i].value;
                let gv = slot(adj, *v, y.shape());
                for ((o, x), e) in gv.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                    *o += x * e;
                }
            }
            Op::Log(v) => {
                let tv = val(*v);
                let gv = slot(adj, *v, tv.shape());
                for ((o, x), a) in gv.data_mut().iter_mut().zip(g.data()).zip(tv.data()) {
                    *o += x / a;
                }
            }
            Op::MaskedSoftmax(v) => {
                let y = &nodes[i].value;
                let inner = tensor::dot(g.data(), y.data());
                let gv = slot(adj, *v, y.shape());
                for ((o, x), p) in gv.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                    *o += p * (x - inner);
                }
            }
            Op::LogSoftmaxAt(v, mask, k) => {
                let tv = val(*v);
                let valid: Vec<bool> = match mask {
                    Some(m) => m.clone(),
                    None => vec![true; tv.len()],
                };
                // Forward succeeded on the same input, so this cannot fail.
                let p = tensor::masked_softmax(tv.data(), &valid).expect("validated in forward");
                let gs = g.item();
                let gv = slot(adj, *v, tv.shape());
                for (j, (o, pj)) in gv.data_mut().iter_mut().zip(&p).enumerate() {
                    let delta = if j == *k { 1.0 } else { 0.0 };
                    *o += gs * (delta - pj);
                }
            }
            Op::StraightThrough(pre) => {
                let s = tensor::sigmoid(val(*pre).item());
                let gv = slot(adj, *pre, val(*pre).shape());
                gv.data_mut()[0] += g.item() * s * (1.0 - s);
            }
        }
    }
}

fn slot<'a>(adj: &'a mut [Option<Tensor>], j: usize, shape: &[usize]) -> &'a mut Tensor {
    adj[j].get_or_insert_with(|| Tensor::zeros(shape))
}

/// Adjoints produced by one backward pass.
#[derive(Clone, Debug)]
pub struct Gradients {
    tape: u64,
    adjoints: Vec<Option<Tensor>>,
    params: Vec<(usize, usize)>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to any node recorded before it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.adjoints.get(v.index).and_then(|a| a.as_ref())
    }

    /// Gradient for registered parameter `id`; zeros when the loss does not
    /// depend on it, `None` if it was never registered.
    pub fn param(&self, id: usize) -> Option<Tensor> {
        let pos = self.params.iter().position(|&(p, _)| p == id)?;
        let node = self.params[pos].1;
        Some(
            self.adjoints
                .get(node)
                .and_then(|a| a.clone())
                .unwrap_or_else(|| Tensor::zeros(&self.shapes[pos])),
        )
    }

    pub fn param_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.params.iter().map(|&(p, _)| p)
    }
}
