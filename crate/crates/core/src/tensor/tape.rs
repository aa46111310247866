//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] owns every tensor created during a forward pass. Operations
//! append a node holding the output value and enough information to compute
//! vector-Jacobian products; [`Tape::backward`] walks the nodes in exact
//! reverse recording order and accumulates gradients into every node that
//! requires one.
//!
//! ```
//! use facile::tensor::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap(), true);
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum_all(sq).unwrap();
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0]);
//! ```

use super::value::{axis_extents, Tensor};
use crate::error::{Error, Result};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation selector for [`Tape::apply`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    Relu,
    Exp,
    Log,
    Tanh,
    Abs,
    Scale(f64),
    Softmax(usize),
    LogSoftmax(usize),
    Sum(usize),
    Mean(usize),
    Max(usize),
    Concat(usize),
    Transpose,
    L2Normalize(usize),
    CosineSimilarity,
    BroadcastAdd,
}

#[derive(Clone, Copy, Debug)]
struct Extents {
    outer: usize,
    len: usize,
    inner: usize,
}

impl Extents {
    fn of(op: &'static str, shape: &[usize], axis: usize) -> Result<Self> {
        let (outer, len, inner) = axis_extents(op, shape, axis)?;
        Ok(Self { outer, len, inner })
    }

    #[inline]
    fn at(&self, o: usize, l: usize, i: usize) -> usize {
        (o * self.len + l) * self.inner + i
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Abs(Var),
    Scale(Var, f64),
    Softmax(Var, Extents),
    LogSoftmax(Var, Extents),
    Sum(Var, Extents),
    Mean(Var, Extents),
    Max(Var, Vec<usize>),
    Concat(Vec<Var>, Vec<usize>, usize, usize),
    Transpose(Var),
    L2Normalize {
        x: Var,
        ext: Extents,
        norms: Vec<f64>,
        eps: f64,
    },
    Cosine {
        a: Var,
        b: Var,
        dim: usize,
        eps: f64,
    },
    BroadcastAdd(Var, Var),
    Pick(Var, Vec<usize>),
    SliceRows(Var, usize),
    SliceCols(Var, usize, usize),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Records operations for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Copy of `x` that is cut off from the gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`backward`](Self::backward) target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(())
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("shape preserved");
        let rg = self.rg(&[x]);
        self.push(value, rg, op)
    }

    fn binary(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(op_name, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, rg, op))
    }

    /// Dispatches one primitive by kind; `inputs` must have the op's arity.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = match kind {
            OpKind::MatMul
            | OpKind::Add
            | OpKind::Sub
            | OpKind::Mul
            | OpKind::CosineSimilarity
            | OpKind::BroadcastAdd => 2,
            OpKind::Concat(_) => inputs.len().max(1),
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::Contract(format!(
                "{kind:?} expects {arity} inputs, got {}",
                inputs.len()
            )));
        }
        let x = inputs[0];
        match kind {
            OpKind::MatMul => self.matmul(x, inputs[1]),
            OpKind::Add => self.add(x, inputs[1]),
            OpKind::Sub => self.sub(x, inputs[1]),
            OpKind::Mul => self.mul(x, inputs[1]),
            OpKind::Relu => Ok(self.relu(x)),
            OpKind::Exp => Ok(self.exp(x)),
            OpKind::Log => self.log(x),
            OpKind::Tanh => Ok(self.tanh(x)),
            OpKind::Abs => Ok(self.abs(x)),
            OpKind::Scale(c) => Ok(self.scale(x, c)),
            OpKind::Softmax(axis) => self.softmax(x, axis),
            OpKind::LogSoftmax(axis) => self.log_softmax(x, axis),
            OpKind::Sum(axis) => self.sum(x, axis),
            OpKind::Mean(axis) => self.mean(x, axis),
            OpKind::Max(axis) => self.max(x, axis),
            OpKind::Concat(axis) => self.concat(inputs, axis),
            OpKind::Transpose => self.transpose(x),
            OpKind::L2Normalize(axis) => self.l2_normalize(x, axis, 0.0),
            OpKind::CosineSimilarity => self.cosine_similarity(x, inputs[1], 0.0),
            OpKind::BroadcastAdd => self.broadcast_add(x, inputs[1]),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::matrix(m, n, out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, rg, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("elementwise_mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).data().iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::domain("log", format!("non-positive input {bad}")));
        }
        Ok(self.unary(x, f64::ln, Op::Log(x)))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let src = self.value(x);
        let ext = Extents::of("softmax", src.shape(), axis)?;
        let out = softmax_raw(src.data(), ext);
        let value = Tensor::new(src.shape().to_vec(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, rg, Op::Softmax(x, ext)))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let src = self.value(x);
        let ext = Extents::of("log_softmax", src.shape(), axis)?;
        let d = src.data();
        let mut out = vec![0.0; d.len()];
        for o in 0..ext.outer {
            for i in 0..ext.inner {
                let max = (0..ext.len)
                    .map(|l| d[ext.at(o, l, i)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let lse = max
                    + (0..ext.len)
                        .map(|l| (d[ext.at(o, l, i)] - max).exp())
                        .sum::<f64>()
                        .ln();
                for l in 0..ext.len {
                    let k = ext.at(o, l, i);
                    out[k] = d[k] - lse;
                }
            }
        }
        let value = Tensor::new(src.shape().to_vec(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, rg, Op::LogSoftmax(x, ext)))
    }

    fn reduce(&mut self, op_name: &'static str, x: Var, axis: usize) -> Result<(Vec<usize>, Extents)> {
        let shape = self.shape(x).to_vec();
        let ext = Extents::of(op_name, &shape, axis)?;
        let mut out_shape = shape;
        out_shape.remove(axis);
        Ok((out_shape, ext))
    }

    pub fn sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (shape, ext) = self.reduce("sum", x, axis)?;
        let out = sum_axis(self.value(x).data(), ext);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::Sum(x, ext)))
    }

    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (shape, ext) = self.reduce("mean", x, axis)?;
        let n = ext.len as f64;
        let out = sum_axis(self.value(x).data(), ext)
            .into_iter()
            .map(|v| v / n)
            .collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::Mean(x, ext)))
    }

    /// Maximum along `axis`; the gradient routes to the first maximal entry.
    pub fn max(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (shape, ext) = self.reduce("max", x, axis)?;
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(ext.outer * ext.inner);
        let mut arg = Vec::with_capacity(ext.outer * ext.inner);
        for o in 0..ext.outer {
            for i in 0..ext.inner {
                let mut best = ext.at(o, 0, i);
                for l in 1..ext.len {
                    let k = ext.at(o, l, i);
                    if d[k] > d[best] {
                        best = k;
                    }
                }
                out.push(d[best]);
                arg.push(best);
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::Max(x, arg)))
    }

    /// Sums every element into a scalar.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let flat = self.reshape(x, vec![n])?;
        self.sum(flat, 0)
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let flat = self.reshape(x, vec![n])?;
        self.mean(flat, 0)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return Err(Error::Contract("concat of zero tensors".into()));
        };
        let base = self.shape(first).to_vec();
        let (outer, _, inner) = axis_extents("concat", &base, axis)?;
        let mut lens = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            lens.push(s[axis]);
        }
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&v, &len) in inputs.iter().zip(&lens) {
                let d = self.value(v).data();
                out.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.rg(inputs);
        Ok(self.push(
            Tensor::new(shape, out)?,
            rg,
            Op::Concat(inputs.to_vec(), lens, outer, inner),
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::shape("transpose", &s, &[2]));
        }
        let out = transpose_raw(self.value(x).data(), s[0], s[1]);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::matrix(s[1], s[0], out)?, rg, Op::Transpose(x)))
    }

    /// Divides each slice along `axis` by `max(‖slice‖, eps)`.
    ///
    /// With `eps == 0` a zero-norm slice is a domain error.
    pub fn l2_normalize(&mut self, x: Var, axis: usize, eps: f64) -> Result<Var> {
        let src = self.value(x);
        let ext = Extents::of("l2_normalize", src.shape(), axis)?;
        let d = src.data();
        let mut out = vec![0.0; d.len()];
        let mut norms = Vec::with_capacity(ext.outer * ext.inner);
        for o in 0..ext.outer {
            for i in 0..ext.inner {
                let norm = (0..ext.len)
                    .map(|l| d[ext.at(o, l, i)].powi(2))
                    .sum::<f64>()
                    .sqrt();
                if eps <= 0.0 && norm == 0.0 {
                    return Err(Error::domain("l2_normalize", "zero-norm input"));
                }
                let denom = norm.max(eps);
                for l in 0..ext.len {
                    let k = ext.at(o, l, i);
                    out[k] = d[k] / denom;
                }
                norms.push(norm);
            }
        }
        let value = Tensor::new(src.shape().to_vec(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, rg, Op::L2Normalize { x, ext, norms, eps }))
    }

    /// Cosine similarity between matching slices along the last axis.
    pub fn cosine_similarity(&mut self, a: Var, b: Var, eps: f64) -> Result<Var> {
        self.same_shape("cosine_similarity", a, b)?;
        let shape = self.shape(a).to_vec();
        let dim = *shape.last().ok_or_else(|| Error::shape("cosine_similarity", &shape, &[1]))?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(va.len() / dim);
        for (ra, rb) in va.chunks(dim).zip(vb.chunks(dim)) {
            let na = norm(ra);
            let nb = norm(rb);
            if eps <= 0.0 && (na == 0.0 || nb == 0.0) {
                return Err(Error::domain("cosine_similarity", "zero-norm input"));
            }
            out.push(dot(ra, rb) / (na.max(eps) * nb.max(eps)));
        }
        let out_shape = shape[..shape.len() - 1].to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(out_shape, out)?, rg, Op::Cosine { a, b, dim, eps }))
    }

    /// Adds a length-`c` vector to every row of an `r × c` matrix.
    pub fn broadcast_add(&mut self, x: Var, row: Var) -> Result<Var> {
        let (sx, sr) = (self.shape(x), self.shape(row));
        let c = sx.last().copied().unwrap_or(0);
        if sx.len() != 2 || self.value(row).len() != c {
            return Err(Error::shape("broadcast_add", sx, sr));
        }
        let bias = self.value(row).data();
        let data = self
            .value(x)
            .data()
            .chunks(c)
            .flat_map(|r| r.iter().zip(bias).map(|(a, b)| a + b))
            .collect();
        let value = Tensor::new(sx.to_vec(), data)?;
        let rg = self.rg(&[x, row]);
        Ok(self.push(value, rg, Op::BroadcastAdd(x, row)))
    }

    /// Selects `x[i, idx[i]]` for every row of an `r × c` matrix.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || idx.len() != s[0] {
            return Err(Error::shape("pick", &s, &[idx.len()]));
        }
        if let Some(&bad) = idx.iter().find(|&&j| j >= s[1]) {
            return Err(Error::Contract(format!("pick: index {bad} out of range for {} columns", s[1])));
        }
        let d = self.value(x).data();
        let out = idx.iter().enumerate().map(|(i, &j)| d[i * s[1] + j]).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::vector(out)?, rg, Op::Pick(x, idx.to_vec())))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || start >= end || end > s[0] {
            return Err(Error::shape("slice_rows", &s, &[start, end]));
        }
        let c = s[1];
        let out = self.value(x).data()[start * c..end * c].to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::matrix(end - start, c, out)?, rg, Op::SliceRows(x, start)))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || start >= end || end > s[1] {
            return Err(Error::shape("slice_cols", &s, &[start, end]));
        }
        let out = self
            .value(x)
            .data()
            .chunks(s[1])
            .flat_map(|r| r[start..end].iter().copied())
            .collect();
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::matrix(s[0], end - start, out)?,
            rg,
            Op::SliceCols(x, start, end),
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, rg, Op::Reshape(x)))
    }

    /// Populates gradients of the scalar `loss` with respect to every node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Contract("backward on an empty tape".into()));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let (lower, upper) = grads.split_at_mut(idx);
            let Some(g) = upper[0].as_deref() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            propagate(&self.nodes, node, g, lower);
        }
        self.grads = grads;
        Ok(())
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
    f(slot);
}

fn propagate(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |v: Var| nodes[v.0].value.data();
    let y = node.value.data();
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let sa = nodes[a.0].value.shape();
            let (m, k) = (sa[0], sa[1]);
            let n = nodes[b.0].value.shape()[1];
            accumulate(nodes, grads, *a, |ga| {
                let bd = val(*b);
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        ga[i * k + p] += dot(grow, &bd[p * n..(p + 1) * n]);
                    }
                }
            });
            accumulate(nodes, grads, *b, |gb| {
                let ad = val(*a);
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let av = ad[i * k + p];
                        for (o, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *o += av * gv;
                        }
                    }
                }
            });
        }
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, |ga| add_into(ga, g));
            accumulate(nodes, grads, *b, |gb| add_into(gb, g));
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, |ga| add_into(ga, g));
            accumulate(nodes, grads, *b, |gb| {
                gb.iter_mut().zip(g).for_each(|(o, &v)| *o -= v)
            });
        }
        Op::Mul(a, b) => {
            accumulate(nodes, grads, *a, |ga| {
                for ((o, &gv), &bv) in ga.iter_mut().zip(g).zip(val(*b)) {
                    *o += gv * bv;
                }
            });
            accumulate(nodes, grads, *b, |gb| {
                for ((o, &gv), &av) in gb.iter_mut().zip(g).zip(val(*a)) {
                    *o += gv * av;
                }
            });
        }
        Op::Relu(x) => accumulate(nodes, grads, *x, |gx| {
            for ((o, &gv), &xv) in gx.iter_mut().zip(g).zip(val(*x)) {
                if xv > 0.0 {
                    *o += gv;
                }
            }
        }),
        Op::Exp(x) => accumulate(nodes, grads, *x, |gx| {
            for ((o, &gv), &yv) in gx.iter_mut().zip(g).zip(y) {
                *o += gv * yv;
            }
        }),
        Op::Log(x) => accumulate(nodes, grads, *x, |gx| {
            for ((o, &gv), &xv) in gx.iter_mut().zip(g).zip(val(*x)) {
                *o += gv / xv;
            }
        }),
        Op::Tanh(x) => accumulate(nodes, grads, *x, |gx| {
            for ((o, &gv), &yv) in gx.iter_mut().zip(g).zip(y) {
                *o += gv * (1.0 - yv * yv);
            }
        }),
        Op::Abs(x) => accumulate(nodes, grads, *x, |gx| {
            for ((o, &gv), &xv) in gx.iter_mut().zip(g).zip(val(*x)) {
                if xv > 0.0 {
                    *o += gv;
                } else if xv < 0.0 {
                    *o -= gv;
                }
            }
        }),
        Op::Scale(x, c) => accumulate(nodes, grads, *x, |gx| {
            gx.iter_mut().zip(g).for_each(|(o, &v)| *o += c * v)
        }),
        Op::Softmax(x, ext) => accumulate(nodes, grads, *x, |gx| {
            for o in 0..ext.outer {
                for i in 0..ext.inner {
                    let s: f64 = (0..ext.len).map(|l| g[ext.at(o, l, i)] * y[ext.at(o, l, i)]).sum();
                    for l in 0..ext.len {
                        let k = ext.at(o, l, i);
                        gx[k] += y[k] * (g[k] - s);
                    }
                }
            }
        }),
        Op::LogSoftmax(x, ext) => accumulate(nodes, grads, *x, |gx| {
            for o in 0..ext.outer {
                for i in 0..ext.inner {
                    let s: f64 = (0..ext.len).map(|l| g[ext.at(o, l, i)]).sum();
                    for l in 0..ext.len {
                        let k = ext.at(o, l, i);
                        gx[k] += g[k] - y[k].exp() * s;
                    }
                }
            }
        }),
        Op::Sum(x, ext) | Op::Mean(x, ext) => {
            let scale = if matches!(node.op, Op::Mean(..)) {
                1.0 / ext.len as f64
            } else {
                1.0
            };
            accumulate(nodes, grads, *x, |gx| {
                for o in 0..ext.outer {
                    for i in 0..ext.inner {
                        let gv = g[o * ext.inner + i] * scale;
                        for l in 0..ext.len {
                            gx[ext.at(o, l, i)] += gv;
                        }
                    }
                }
            })
        }
        Op::Max(x, arg) => accumulate(nodes, grads, *x, |gx| {
            for (&k, &gv) in arg.iter().zip(g) {
                gx[k] += gv;
            }
        }),
        Op::Concat(inputs, lens, outer, inner) => {
            let total: usize = lens.iter().sum();
            let mut offset = 0;
            for (&v, &len) in inputs.iter().zip(lens) {
                accumulate(nodes, grads, v, |gv| {
                    for o in 0..*outer {
                        let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                        add_into(&mut gv[o * len * inner..(o + 1) * len * inner], src);
                    }
                });
                offset += len;
            }
        }
        Op::Transpose(x) => {
            let s = nodes[x.0].value.shape();
            let gt = transpose_raw(g, s[1], s[0]);
            accumulate(nodes, grads, *x, |gx| add_into(gx, &gt));
        }
        Op::L2Normalize { x, ext, norms, eps } => accumulate(nodes, grads, *x, |gx| {
            for o in 0..ext.outer {
                for i in 0..ext.inner {
                    let n = norms[o * ext.inner + i];
                    if n > *eps {
                        let yg: f64 = (0..ext.len).map(|l| y[ext.at(o, l, i)] * g[ext.at(o, l, i)]).sum();
                        for l in 0..ext.len {
                            let k = ext.at(o, l, i);
                            gx[k] += (g[k] - y[k] * yg) / n;
                        }
                    } else {
                        for l in 0..ext.len {
                            let k = ext.at(o, l, i);
                            gx[k] += g[k] / eps;
                        }
                    }
                }
            }
        }),
        Op::Cosine { a, b, dim, eps } => {
            let (ad, bd) = (val(*a), val(*b));
            let dim = *dim;
            let per_row = |src: &[f64], other: &[f64], out: &mut [f64]| {
                for (r, &gv) in g.iter().enumerate() {
                    let (s, t) = (&src[r * dim..(r + 1) * dim], &other[r * dim..(r + 1) * dim]);
                    let (ns, nt) = (norm(s), norm(t));
                    let (ds, dt) = (ns.max(*eps), nt.max(*eps));
                    let c = dot(s, t) / (ds * dt);
                    let shrink = if ns > *eps { c / (ds * ds) } else { 0.0 };
                    for j in 0..dim {
                        out[r * dim + j] += gv * (t[j] / (ds * dt) - shrink * s[j]);
                    }
                }
            };
            accumulate(nodes, grads, *a, |ga| per_row(ad, bd, ga));
            accumulate(nodes, grads, *b, |gb| per_row(bd, ad, gb));
        }
        Op::BroadcastAdd(x, row) => {
            accumulate(nodes, grads, *x, |gx| add_into(gx, g));
            accumulate(nodes, grads, *row, |gr| {
                let c = gr.len();
                for chunk in g.chunks(c) {
                    add_into(gr, chunk);
                }
            });
        }
        Op::Pick(x, idx) => {
            let c = nodes[x.0].value.cols();
            accumulate(nodes, grads, *x, |gx| {
                for (i, (&j, &gv)) in idx.iter().zip(g).enumerate() {
                    gx[i * c + j] += gv;
                }
            })
        }
        Op::SliceRows(x, start) => {
            let c = nodes[x.0].value.cols();
            accumulate(nodes, grads, *x, |gx| {
                add_into(&mut gx[start * c..start * c + g.len()], g)
            })
        }
        Op::SliceCols(x, start, end) => {
            let c = nodes[x.0].value.cols();
            let w = end - start;
            accumulate(nodes, grads, *x, |gx| {
                for (r, chunk) in g.chunks(w).enumerate() {
                    add_into(&mut gx[r * c + start..r * c + end], chunk);
                }
            })
        }
        Op::Reshape(x) => accumulate(nodes, grads, *x, |gx| add_into(gx, g)),
    }
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            for (o, &bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(d: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; d.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = d[i * cols + j];
        }
    }
    out
}

fn sum_axis(d: &[f64], ext: Extents) -> Vec<f64> {
    let mut out = vec![0.0; ext.outer * ext.inner];
    for o in 0..ext.outer {
        for l in 0..ext.len {
            for i in 0..ext.inner {
                out[o * ext.inner + i] += d[ext.at(o, l, i)];
            }
        }
    }
    out
}

fn softmax_raw(d: &[f64], ext: Extents) -> Vec<f64> {
    let mut out = vec![0.0; d.len()];
    for o in 0..ext.outer {
        for i in 0..ext.inner {
            let max = (0..ext.len)
                .map(|l| d[ext.at(o, l, i)])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for l in 0..ext.len {
                let k = ext.at(o, l, i);
                out[k] = (d[k] - max).exp();
                total += out[k];
            }
            for l in 0..ext.len {
                out[ext.at(o, l, i)] /= total;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_leaf(tape: &mut Tape, v: &[f64]) -> Var {
        tape.leaf(Tensor::vector(v.to_vec()).unwrap(), true)
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let a = Tensor::matrix(3, 3, (1..=9).map(f64::from).collect()).unwrap();
        let va = tape.leaf(a.clone(), false);
        let id = tape.constant(Tensor::eye(3).unwrap());
        let out = tape.matmul(va, id).unwrap();
        assert_eq!(tape.value(out), &a);
    }

    #[test]
    fn softmax_symmetric_pair() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[0.0, 0.0]);
        let s = tape.softmax(x, 0).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_survives_large_logits() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1000.0, 1000.0, -1000.0]);
        let s = tape.softmax(x, 0).unwrap();
        let d = tape.value(s).data();
        assert!((d[0] - 0.5).abs() < 1e-15 && d[2] == 0.0);
    }

    #[test]
    fn l2_normalize_three_four() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[3.0, 4.0]);
        let y = tape.l2_normalize(x, 0, 0.0).unwrap();
        let d = tape.value(y).data();
        assert!((d[0] - 0.6).abs() < 1e-15 && (d[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn square_sum_gradient() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0, 2.0]);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn relu_gradient_with_kink_convention() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[-1.0, 3.0, 0.0]);
        let r = tape.relu(x);
        let loss = tape.sum_all(r).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn shape_errors_name_op_and_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]).unwrap());
        let b = tape.constant(Tensor::zeros(&[2, 3]).unwrap());
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
        let c = tape.constant(Tensor::zeros(&[3]).unwrap());
        assert!(tape.add(a, c).is_err());
    }

    #[test]
    fn domain_errors() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0, 0.0]).unwrap());
        assert!(matches!(tape.log(x), Err(Error::Domain { .. })));
        let z = tape.constant(Tensor::vector(vec![0.0, 0.0]).unwrap());
        assert!(matches!(tape.l2_normalize(z, 0, 0.0), Err(Error::Domain { .. })));
        assert!(tape.l2_normalize(z, 0, 1e-12).is_ok());
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0, 2.0]);
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
        let mut empty = Tape::new();
        assert!(empty.backward(Var(0)).is_err());
    }

    #[test]
    fn reuse_accumulates() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[2.0]);
        let a = tape.scale(x, 3.0);
        let b = tape.add(a, x).unwrap();
        let loss = tape.sum_all(b).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[4.0]);
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[2.0, 1.0]);
        let d = tape.detach(x);
        let p = tape.mul(x, d).unwrap();
        let loss = tape.sum_all(p).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 1.0]);
        assert!(tape.grad(d).is_none());
    }

    #[test]
    fn max_routes_to_first_maximum() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(2, 3, vec![1.0, 5.0, 5.0, 0.0, -1.0, 2.0]).unwrap(), true);
        let m = tape.max(x, 1).unwrap();
        assert_eq!(tape.value(m).data(), &[5.0, 2.0]);
        let loss = tape.sum_all(m).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn concat_and_slices_invert() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(), true);
        let b = tape.leaf(Tensor::matrix(2, 1, vec![5.0, 6.0]).unwrap(), true);
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let back = tape.slice_cols(c, 2, 3).unwrap();
        assert_eq!(tape.value(back).data(), &[5.0, 6.0]);
        let r = tape.slice_rows(c, 1, 2).unwrap();
        assert_eq!(tape.value(r).data(), &[3.0, 4.0, 6.0]);
    }
}
