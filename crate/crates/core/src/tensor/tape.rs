use std::collections::HashMap;

use super::{Element, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The differentiable primitive set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    MatMul,
    Relu,
    Exp,
    Log,
    Square,
    Sum,
    Mean,
    SoftmaxRows,
    LogSoftmaxRows,
    L2NormalizeRows,
    ConcatRows,
    Transpose,
    GatherRows,
    Scale,
    Clamp,
}

impl Primitive {
    pub fn name(self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::MatMul => "matmul",
            Primitive::Relu => "relu",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::Square => "square",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::SoftmaxRows => "softmax_rows",
            Primitive::LogSoftmaxRows => "log_softmax_rows",
            Primitive::L2NormalizeRows => "l2_normalize_rows",
            Primitive::ConcatRows => "concat_rows",
            Primitive::Transpose => "transpose",
            Primitive::GatherRows => "gather_rows",
            Primitive::Scale => "scale",
            Primitive::Clamp => "clamp",
        }
    }
}

/// Added to row norms before dividing so zero rows stay finite.
pub const L2_NORM_EPS: f64 = 1e-12;

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Binary(Primitive, Var, Var),
    Unary(Primitive, Var),
    Concat(Vec<Var>),
    Gather(Var, Vec<usize>),
    Scale(Var, T),
    Clamp(Var, T, T),
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Reverse-mode tape. Nodes are appended in execution order, so the node
/// list is always topologically sorted.
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Gradients of a scalar with respect to every leaf that requires grad.
#[derive(Clone, Debug, Default)]
pub struct Gradients<T> {
    map: HashMap<Var, Tensor<T>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.map.get(&var)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

fn row_broadcast(op: Primitive, a: &[usize], b: &[usize]) -> Result<bool, TensorError> {
    if a == b {
        return Ok(false);
    }
    if a.len() == 2 && b.len() == 2 && b[0] == 1 && a[1] == b[1] {
        return Ok(true);
    }
    Err(TensorError::Shape {
        op: op.name(),
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    })
}

fn require_matrix<T: Element>(op: Primitive, t: &Tensor<T>) -> Result<(usize, usize), TensorError> {
    if t.rank() != 2 {
        return Err(TensorError::Shape {
            op: op.name(),
            lhs: t.shape().to_vec(),
            rhs: vec![],
        });
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn matmul_raw<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + aip * bv;
            }
        }
    }
    out
}

fn transpose_raw<T: Element>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

fn row_max<T: Element>(row: &[T]) -> T {
    row.iter().copied().fold(T::neg_infinity(), T::max)
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    /// Clears all recorded values so the tape can host a fresh forward pass.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> Result<&Node<T>, TensorError> {
        self.nodes.get(v.0).ok_or(TensorError::UnknownVar(v.0))
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Reads a single-element tensor.
    pub fn scalar_value(&self, v: Var) -> Result<T, TensorError> {
        let t = &self.node(v)?.value;
        if t.len() != 1 {
            return Err(TensorError::NonScalarLoss(t.shape().to_vec()));
        }
        Ok(t.data()[0])
    }

    fn binary(&mut self, prim: Primitive, a: Var, b: Var) -> Result<Var, TensorError> {
        let (na, nb) = (self.node(a)?, self.node(b)?);
        let (ta, tb) = (&na.value, &nb.value);
        let value = match prim {
            Primitive::MatMul => {
                let (m, k) = require_matrix(prim, ta)?;
                let (k2, n) = require_matrix(prim, tb)?;
                if k != k2 {
                    return Err(TensorError::Shape {
                        op: prim.name(),
                        lhs: ta.shape().to_vec(),
                        rhs: tb.shape().to_vec(),
                    });
                }
                Tensor::new(vec![m, n], matmul_raw(ta.data(), tb.data(), m, k, n))?
            }
            _ => {
                let bc = row_broadcast(prim, ta.shape(), tb.shape())?;
                let cols = tb.len().max(1);
                let f = match prim {
                    Primitive::Add => |x: T, y: T| x + y,
                    Primitive::Sub => |x: T, y: T| x - y,
                    Primitive::Mul => |x: T, y: T| x * y,
                    _ => unreachable!("not an elementwise binary primitive"),
                };
                let data = ta
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| f(x, tb.data()[if bc { i % cols } else { i }]))
                    .collect();
                Tensor::new(ta.shape().to_vec(), data)?
            }
        };
        let rg = na.requires_grad || nb.requires_grad;
        Ok(self.push(value, Op::Binary(prim, a, b), rg))
    }

    fn unary(&mut self, prim: Primitive, a: Var) -> Result<Var, TensorError> {
        let na = self.node(a)?;
        let x = &na.value;
        let value = match prim {
            Primitive::Relu => map(x, |v| if v < T::zero() { T::zero() } else { v }),
            Primitive::Exp => map(x, T::exp),
            Primitive::Log => {
                if let Some(bad) = x.data().iter().find(|v| !(**v > T::zero())) {
                    return Err(TensorError::Domain {
                        op: prim.name(),
                        detail: format!("logarithm of non-positive value {}", bad.as_f64()),
                    });
                }
                map(x, T::ln)
            }
            Primitive::Square => map(x, |v| v * v),
            Primitive::Sum => Tensor::scalar(x.data().iter().fold(T::zero(), |s, &v| s + v)),
            Primitive::Mean => {
                if x.is_empty() {
                    return Err(TensorError::Domain {
                        op: prim.name(),
                        detail: "mean of an empty tensor".into(),
                    });
                }
                let s = x.data().iter().fold(T::zero(), |s, &v| s + v);
                Tensor::scalar(s / T::cast_from(x.len() as f64))
            }
            Primitive::SoftmaxRows => {
                let (r, c) = require_matrix(prim, x)?;
                let mut out = Vec::with_capacity(r * c);
                for i in 0..r {
                    let row = x.row(i);
                    let m = row_max(row);
                    let e: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
                    let s = e.iter().fold(T::zero(), |s, &v| s + v);
                    out.extend(e.into_iter().map(|v| v / s));
                }
                Tensor::new(vec![r, c], out)?
            }
            Primitive::LogSoftmaxRows => {
                let (r, c) = require_matrix(prim, x)?;
                let mut out = Vec::with_capacity(r * c);
                for i in 0..r {
                    let row = x.row(i);
                    let m = row_max(row);
                    let s = row.iter().fold(T::zero(), |s, &v| s + (v - m).exp());
                    let lse = m + s.ln();
                    out.extend(row.iter().map(|&v| v - lse));
                }
                Tensor::new(vec![r, c], out)?
            }
            Primitive::L2NormalizeRows => {
                let (r, c) = require_matrix(prim, x)?;
                let eps = T::cast_from(L2_NORM_EPS);
                let mut out = Vec::with_capacity(r * c);
                for i in 0..r {
                    let row = x.row(i);
                    let n = row.iter().fold(T::zero(), |s, &v| s + v * v).sqrt();
                    out.extend(row.iter().map(|&v| v / (n + eps)));
                }
                Tensor::new(vec![r, c], out)?
            }
            Primitive::Transpose => {
                let (r, c) = require_matrix(prim, x)?;
                Tensor::new(vec![c, r], transpose_raw(x.data(), r, c))?
            }
            _ => unreachable!("not a unary primitive"),
        };
        let rg = na.requires_grad;
        Ok(self.push(value, Op::Unary(prim, a), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Primitive::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Primitive::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Primitive::Mul, a, b)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Primitive::MatMul, a, b)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(Primitive::Relu, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(Primitive::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(Primitive::Log, a)
    }

    pub fn square(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(Primitive::Square, a)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(Primitive::Sum, a)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(Primitive::Mean, a)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(Primitive::SoftmaxRows, a)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(Primitive::LogSoftmaxRows, a)
    }

    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(Primitive::L2NormalizeRows, a)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(Primitive::Transpose, a)
    }

    /// Stacks matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::InvalidArgument("concat_rows of nothing".into()))?;
        let cols = require_matrix(Primitive::ConcatRows, &self.node(*first)?.value)?.1;
        let mut rows = 0;
        let mut data = Vec::new();
        let mut rg = false;
        for &p in parts {
            let n = self.node(p)?;
            let (r, c) = require_matrix(Primitive::ConcatRows, &n.value)?;
            if c != cols {
                return Err(TensorError::Shape {
                    op: Primitive::ConcatRows.name(),
                    lhs: vec![rows, cols],
                    rhs: n.value.shape().to_vec(),
                });
            }
            rows += r;
            data.extend_from_slice(n.value.data());
            rg |= n.requires_grad;
        }
        let value = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var, TensorError> {
        let na = self.node(a)?;
        require_matrix(Primitive::GatherRows, &na.value)?;
        let value = na.value.select_rows(indices)?;
        let rg = na.requires_grad;
        Ok(self.push(value, Op::Gather(a, indices.to_vec()), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, TensorError> {
        let na = self.node(a)?;
        let s = T::cast_from(factor);
        let value = map(&na.value, |v| v * s);
        let rg = na.requires_grad;
        Ok(self.push(value, Op::Scale(a, s), rg))
    }

    /// Elementwise clamp to `[lo, hi]`; gradient passes only inside the range.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var, TensorError> {
        if !(lo <= hi) {
            return Err(TensorError::InvalidArgument(format!("clamp range [{lo}, {hi}]")));
        }
        let na = self.node(a)?;
        let (l, h) = (T::cast_from(lo), T::cast_from(hi));
        let value = map(&na.value, |v| if v < l { l } else if v > h { h } else { v });
        let rg = na.requires_grad;
        Ok(self.push(value, Op::Clamp(a, l, h), rg))
    }

    /// Affine map `x W + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var, TensorError> {
        let xw = self.matmul(x, weight)?;
        self.add(xw, bias)
    }

    /// Which side of each non-differentiable point every relu and clamp input
    /// currently sits on. Two forward passes with equal patterns lie on the
    /// same smooth piece of the function.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Unary(Primitive::Relu, a) => {
                    out.extend(self.nodes[a.0].value.data().iter().map(|&v| v > T::zero()));
                }
                Op::Clamp(a, lo, hi) => {
                    for &v in self.nodes[a.0].value.data() {
                        out.push(v < *lo);
                        out.push(v > *hi);
                    }
                }
                _ => {}
            }
        }
        out
    }

    /// Back-propagates from a scalar `loss`, returning the gradient of every
    /// leaf that requires grad. Leaves the loss does not depend on get zeros.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>, TensorError> {
        if self.consumed {
            return Err(TensorError::AlreadyBackpropagated);
        }
        let ln = self.node(loss)?;
        if ln.value.len() != 1 {
            return Err(TensorError::NonScalarLoss(ln.value.shape().to_vec()));
        }
        let loss_rg = ln.requires_grad;
        self.consumed = true;

        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        if loss_rg {
            grads[loss.0] = Some(vec![T::one()]);
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(idx, &g, &mut grads);
        }

        let mut map = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let data = grads[i]
                    .take()
                    .unwrap_or_else(|| vec![T::zero(); node.value.len()]);
                map.insert(Var(i), Tensor::new(node.value.shape().to_vec(), data)?);
            }
        }
        Ok(Gradients { map })
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Binary(prim, a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                match prim {
                    Primitive::MatMul => {
                        let (m, k) = (ta.shape()[0], ta.shape()[1]);
                        let n = tb.shape()[1];
                        if self.nodes[a.0].requires_grad {
                            let bt = transpose_raw(tb.data(), k, n);
                            let ga = matmul_raw(g, &bt, m, n, k);
                            self.accumulate(*a, grads, |acc| add_into(acc, &ga));
                        }
                        if self.nodes[b.0].requires_grad {
                            let at = transpose_raw(ta.data(), m, k);
                            let gb = matmul_raw(&at, g, k, m, n);
                            self.accumulate(*b, grads, |acc| add_into(acc, &gb));
                        }
                    }
                    _ => {
                        let bc = ta.shape() != tb.shape();
                        let cols = tb.len().max(1);
                        let bidx = |i: usize| if bc { i % cols } else { i };
                        if self.nodes[a.0].requires_grad {
                            self.accumulate(*a, grads, |acc| {
                                for (i, v) in acc.iter_mut().enumerate() {
                                    *v = *v
                                        + match prim {
                                            Primitive::Mul => g[i] * tb.data()[bidx(i)],
                                            _ => g[i],
                                        };
                                }
                            });
                        }
                        if self.nodes[b.0].requires_grad {
                            self.accumulate(*b, grads, |acc| {
                                for (i, &gi) in g.iter().enumerate() {
                                    let j = bidx(i);
                                    acc[j] = acc[j]
                                        + match prim {
                                            Primitive::Add => gi,
                                            Primitive::Sub => -gi,
                                            _ => gi * ta.data()[i],
                                        };
                                }
                            });
                        }
                    }
                }
            }
            Op::Unary(prim, a) => {
                if !self.nodes[a.0].requires_grad {
                    return;
                }
                let x = &self.nodes[a.0].value;
                let xd = x.data();
                let yd = y.data();
                let ga: Vec<T> = match prim {
                    Primitive::Relu => xd
                        .iter()
                        .zip(g)
                        .map(|(&xv, &gv)| if xv > T::zero() { gv } else { T::zero() })
                        .collect(),
                    Primitive::Exp => yd.iter().zip(g).map(|(&yv, &gv)| gv * yv).collect(),
                    Primitive::Log => xd.iter().zip(g).map(|(&xv, &gv)| gv / xv).collect(),
                    Primitive::Square => {
                        let two = T::cast_from(2.0);
                        xd.iter().zip(g).map(|(&xv, &gv)| two * xv * gv).collect()
                    }
                    Primitive::Sum => vec![g[0]; xd.len()],
                    Primitive::Mean => vec![g[0] / T::cast_from(xd.len() as f64); xd.len()],
                    Primitive::SoftmaxRows => {
                        let c = x.cols();
                        let mut out = Vec::with_capacity(xd.len());
                        for (yr, gr) in yd.chunks(c.max(1)).zip(g.chunks(c.max(1))) {
                            let dot = yr.iter().zip(gr).fold(T::zero(), |s, (&a, &b)| s + a * b);
                            out.extend(yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - dot)));
                        }
                        out
                    }
                    Primitive::LogSoftmaxRows => {
                        let c = x.cols();
                        let mut out = Vec::with_capacity(xd.len());
                        for (yr, gr) in yd.chunks(c.max(1)).zip(g.chunks(c.max(1))) {
                            let gs = gr.iter().fold(T::zero(), |s, &v| s + v);
                            out.extend(yr.iter().zip(gr).map(|(&yv, &gv)| gv - yv.exp() * gs));
                        }
                        out
                    }
                    Primitive::L2NormalizeRows => {
                        let c = x.cols();
                        let eps = T::cast_from(L2_NORM_EPS);
                        let mut out = Vec::with_capacity(xd.len());
                        for (xr, gr) in xd.chunks(c.max(1)).zip(g.chunks(c.max(1))) {
                            let n = xr.iter().fold(T::zero(), |s, &v| s + v * v).sqrt();
                            let d = n + eps;
                            let gx = xr.iter().zip(gr).fold(T::zero(), |s, (&a, &b)| s + a * b);
                            let k = if n > T::zero() { gx / (n * d * d) } else { T::zero() };
                            out.extend(xr.iter().zip(gr).map(|(&xv, &gv)| gv / d - xv * k));
                        }
                        out
                    }
                    Primitive::Transpose => {
                        let (r, c) = (x.shape()[0], x.shape()[1]);
                        transpose_raw(g, c, r)
                    }
                    _ => unreachable!("not a unary primitive"),
                };
                self.accumulate(*a, grads, |acc| add_into(acc, &ga));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.nodes[p.0].value.len();
                    if self.nodes[p.0].requires_grad {
                        let slice = &g[offset..offset + len];
                        self.accumulate(*p, grads, |acc| add_into(acc, slice));
                    }
                    offset += len;
                }
            }
            Op::Gather(a, indices) => {
                if self.nodes[a.0].requires_grad {
                    let c = self.nodes[a.0].value.cols();
                    self.accumulate(*a, grads, |acc| {
                        for (k, &i) in indices.iter().enumerate() {
                            for j in 0..c {
                                acc[i * c + j] = acc[i * c + j] + g[k * c + j];
                            }
                        }
                    });
                }
            }
            Op::Scale(a, s) => {
                if self.nodes[a.0].requires_grad {
                    let s = *s;
                    self.accumulate(*a, grads, |acc| {
                        for (v, &gv) in acc.iter_mut().zip(g) {
                            *v = *v + gv * s;
                        }
                    });
                }
            }
            Op::Clamp(a, lo, hi) => {
                if self.nodes[a.0].requires_grad {
                    let xd = self.nodes[a.0].value.data();
                    self.accumulate(*a, grads, |acc| {
                        for ((v, &gv), &xv) in acc.iter_mut().zip(g).zip(xd) {
                            if xv >= *lo && xv <= *hi {
                                *v = *v + gv;
                            }
                        }
                    });
                }
            }
        }
    }

    fn accumulate(&self, v: Var, grads: &mut [Option<Vec<T>>], f: impl FnOnce(&mut [T])) {
        let len = self.nodes[v.0].value.len();
        let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
        f(slot);
    }
}

fn map<T: Element>(x: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())
        .expect("map preserves length")
}

fn add_into<T: Element>(acc: &mut [T], g: &[T]) {
    for (a, &b) in acc.iter_mut().zip(g) {
        *a = *a + b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_check, rng_normal, Rng};
    use proptest::prelude::*;

    fn m(rows: &[Vec<f64>]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_of_ones() {
        let mut t = Tape::<f64>::new();
        let a = t.constant(Tensor::full(vec![2, 3], 1.0));
        let b = t.constant(Tensor::full(vec![3, 2], 1.0));
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).shape(), &[2, 2]);
        assert!(t.value(c).data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn relu_and_softmax_definitions() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(m(&[vec![-1.0, 0.0, 2.0]]));
        let r = t.relu(x).unwrap();
        assert_eq!(t.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = t.constant(Tensor::zeros(vec![1, 3]));
        let s = t.softmax_rows(z).unwrap();
        for &v in t.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_errors_name_the_primitive() {
        let mut t = Tape::<f64>::new();
        let a = t.constant(Tensor::zeros(vec![2, 3]));
        let b = t.constant(Tensor::zeros(vec![2, 3]));
        match t.matmul(a, b) {
            Err(TensorError::Shape { op, lhs, rhs }) => {
                assert_eq!(op, "matmul");
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
        let c = t.constant(Tensor::zeros(vec![3, 2]));
        assert!(matches!(t.add(a, c), Err(TensorError::Shape { op: "add", .. })));
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(m(&[vec![1.0, 0.0]]));
        assert!(matches!(t.log(x), Err(TensorError::Domain { op: "log", .. })));
    }

    #[test]
    fn square_gradient() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::scalar(3.0));
        let y = t.square(x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn relu_and_clamp_propagate_nan() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::from_f64(vec![3], &[f64::NAN, -1.0, 2.0]).unwrap());
        let r = t.relu(x).unwrap();
        let c = t.clamp(x, -0.5, 0.5).unwrap();
        assert!(t.value(r).data()[0].is_nan());
        assert_eq!(&t.value(r).data()[1..], &[0.0, 2.0]);
        assert!(t.value(c).data()[0].is_nan());
        assert_eq!(&t.value(c).data()[1..], &[-0.5, 0.5]);
    }

    #[test]
    fn disconnected_leaf_gets_zero_gradient() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::full(vec![2, 2], 1.5));
        let c = t.constant(Tensor::scalar(4.0));
        let loss = t.square(c).unwrap();
        let g = t.backward(loss).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::scalar(2.0));
        let y = t.square(x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.backward(y).unwrap_err(), TensorError::AlreadyBackpropagated);
        t.reset();
        let x = t.param(Tensor::scalar(2.0));
        let y = t.square(x).unwrap();
        assert!(t.backward(y).is_ok());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::zeros(vec![2, 2]));
        assert!(matches!(t.backward(x), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = Rng::seed_from_u64(11);
        let a: Tensor<f64> = rng_normal(&mut rng, vec![3, 4], 0.0, 1.0).unwrap();
        let b: Tensor<f64> = rng_normal(&mut rng, vec![4, 2], 0.0, 1.0).unwrap();
        let report = finite_diff_check(
            |t, p| {
                let c = t.matmul(p[0], p[1])?;
                t.sum(c)
            },
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-6, "{report:?}");
    }

    #[test]
    fn l2_normalize_guards_zero_rows() {
        let mut t = Tape::<f64>::new();
        let x = t.param(m(&[vec![0.0, 0.0], vec![3.0, 4.0]]));
        let y = t.l2_normalize_rows(x).unwrap();
        assert_eq!(&t.value(y).data()[..2], &[0.0, 0.0]);
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        assert!(g.get(x).unwrap().all_finite());
    }

    #[test]
    fn row_broadcast_bias_gradient_sums_rows() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::full(vec![5, 2], 1.0));
        let b = t.param(m(&[vec![0.5, -0.5]]));
        let y = t.add(x, b).unwrap();
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(b).unwrap().data(), &[5.0, 5.0]);
    }

    /// Builds a scalar from one primitive applied to random inputs.
    fn primitive_loss(
        prim: Primitive,
        t: &mut Tape<f64>,
        p: &[Var],
        weights: &Tensor<f64>,
    ) -> Result<Var, TensorError> {
        let x = p[0];
        let y = match prim {
            Primitive::Add => t.add(x, p[1])?,
            Primitive::Sub => t.sub(x, p[1])?,
            Primitive::Mul => t.mul(x, p[1])?,
            Primitive::MatMul => {
                let bt = t.transpose(p[1])?;
                t.matmul(x, bt)?
            }
            Primitive::Relu => t.relu(x)?,
            Primitive::Exp => t.exp(x)?,
            Primitive::Log => {
                let sq = t.square(x)?;
                let one = t.constant(Tensor::full(t.value(x).shape().to_vec(), 1.0));
                let pos = t.add(sq, one)?;
                t.log(pos)?
            }
            Primitive::Square => t.square(x)?,
            Primitive::Sum => t.sum(x)?,
            Primitive::Mean => t.mean(x)?,
            Primitive::SoftmaxRows => t.softmax_rows(x)?,
            Primitive::LogSoftmaxRows => t.log_softmax_rows(x)?,
            Primitive::L2NormalizeRows => t.l2_normalize_rows(x)?,
            Primitive::ConcatRows => {
                let c = t.concat_rows(&[x, p[1]])?;
                t.gather_rows(c, &[0, 0])?
            }
            Primitive::Transpose => {
                let tt = t.transpose(x)?;
                t.transpose(tt)?
            }
            Primitive::GatherRows => t.gather_rows(x, &[1, 0, 1])?,
            Primitive::Scale => t.scale(x, -1.7)?,
            Primitive::Clamp => t.clamp(x, -0.5, 0.5)?,
        };
        // Weighted sum so every output coordinate matters differently.
        let out = if t.value(y).len() == 1 {
            y
        } else if t.value(y).shape() == weights.shape() {
            let w = t.constant(weights.clone());
            t.mul(y, w)?
        } else {
            y
        };
        t.sum(out)
    }

    const ALL: [Primitive; 18] = [
        Primitive::Add,
        Primitive::Sub,
        Primitive::Mul,
        Primitive::MatMul,
        Primitive::Relu,
        Primitive::Exp,
        Primitive::Log,
        Primitive::Square,
        Primitive::Sum,
        Primitive::Mean,
        Primitive::SoftmaxRows,
        Primitive::LogSoftmaxRows,
        Primitive::L2NormalizeRows,
        Primitive::ConcatRows,
        Primitive::Transpose,
        Primitive::GatherRows,
        Primitive::Scale,
        Primitive::Clamp,
    ];

    #[test]
    fn every_primitive_passes_gradient_check_on_random_shapes() {
        let mut rng = Rng::seed_from_u64(2024);
        let mut worst = 0.0f64;
        for case in 0..100 {
            let prim = ALL[case % ALL.len()];
            let rows = 2 + rng.below(4);
            let cols = 2 + rng.below(5);
            let a: Tensor<f64> = rng_normal(&mut rng, vec![rows, cols], 0.0, 1.0).unwrap();
            let b: Tensor<f64> = rng_normal(&mut rng, vec![rows, cols], 0.0, 1.0).unwrap();
            let w: Tensor<f64> = rng_normal(&mut rng, vec![rows, cols], 0.0, 1.0).unwrap();
            let params = vec![a, b];
            let report = finite_diff_check(
                |t, p| primitive_loss(prim, t, p, &w),
                &params,
                1e-5,
            )
            .unwrap();
            assert!(
                report.max_rel_error <= 1e-6,
                "{prim:?} {rows}x{cols}: {report:?}"
            );
            worst = worst.max(report.max_rel_error);
        }
        assert!(worst <= 1e-6);
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(vals in proptest::collection::vec(-30.0f64..30.0, 12)) {
            let mut t = Tape::<f64>::new();
            let x = t.constant(Tensor::new(vec![3, 4], vals).unwrap());
            let s = t.softmax_rows(x).unwrap();
            for i in 0..3 {
                let total: f64 = t.value(s).row(i).iter().sum();
                prop_assert!((total - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn l2_rows_have_unit_norm(vals in proptest::collection::vec(-10.0f64..10.0, 12)) {
            let mut t = Tape::<f64>::new();
            let x = t.constant(Tensor::new(vec![4, 3], vals).unwrap());
            let y = t.l2_normalize_rows(x).unwrap();
            for i in 0..4 {
                let norm_in: f64 = t.value(x).row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm_in > 1e-3 {
                    let n: f64 = t.value(y).row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                    prop_assert!((n - 1.0).abs() <= 1e-10);
                }
            }
        }

        #[test]
        fn forward_is_bitwise_deterministic(seed in any::<u64>()) {
            let run = || {
                let mut rng = Rng::seed_from_u64(seed);
                let a: Tensor<f32> = rng_normal(&mut rng, vec![4, 5], 0.0, 1.0).unwrap();
                let b: Tensor<f32> = rng_normal(&mut rng, vec![5, 3], 0.0, 1.0).unwrap();
                let mut t = Tape::new();
                let (a, b) = (t.param(a), t.param(b));
                let c = t.matmul(a, b).unwrap();
                let s = t.softmax_rows(c).unwrap();
                let bytes = t.value(s).to_le_bytes();
                let l = t.sum(s).unwrap();
                let g = t.backward(l).unwrap();
                (bytes, g.get(a).unwrap().to_le_bytes())
            };
            prop_assert_eq!(run(), run());
        }
    }
}
