//! Reverse-mode gradient tape.
//!
//! Operations append nodes in evaluation order; [`Graph::backward`] walks the
//! nodes in exact reverse append order and accumulates each node's
//! contribution additively into its inputs.

use super::conv::{col2im, ConvGeom};
use super::scalar::{gemm, Mat};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Neg(Var),
    Softplus(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
        /// Unfolded input, `batch × k × p`; empty for pointwise kernels.
        cols: Vec<T>,
    },
    BiasAdd(Var, Var),
    Sum {
        x: Var,
        axis: Option<usize>,
    },
    Mean {
        x: Var,
        axis: Option<usize>,
    },
    Max {
        x: Var,
        argmax: Vec<usize>,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    LogSoftmax {
        x: Var,
        axis: usize,
    },
    GlobalAvgPool(Var),
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    AdaptiveAvgPool {
        x: Var,
        oh: usize,
        ow: usize,
    },
    Reshape(Var),
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Gather {
        x: Var,
        index: Vec<usize>,
    },
    SliceLeading {
        x: Var,
        start: usize,
    },
    L2Normalize {
        x: Var,
        norms: Vec<T>,
    },
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
    pub grad: Option<Vec<T>>,
}

/// A single-step computation record.
///
/// Leaves created with `requires_grad` accumulate gradients across repeated
/// [`backward`](Graph::backward) calls until [`zero_grad`](Graph::zero_grad);
/// intermediate nodes hold the gradient from the most recent call only.
pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Splits `shape` around `axis` into (outer, extent, inner).
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

/// Adaptive pooling window `[start, end)` for output index `i`.
pub(crate) fn pool_window(i: usize, out: usize, inp: usize) -> (usize, usize) {
    let start = i * inp / out;
    let end = ((i + 1) * inp).div_ceil(out);
    (start, end)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an input tensor.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Adds a leaf that participates in differentiation.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Adds a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
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

    /// Gradient held by `v` after the last backward pass, if any reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor<T>> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub(crate) fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op: if requires_grad { op } else { Op::Leaf },
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Populates gradients of `loss` with respect to every node it depends on.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.nodes[loss.0].value.shape().to_vec();
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut scratch: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        scratch[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = scratch[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => add_into(acc, &g),
                    None => node.grad = Some(g),
                }
                continue;
            }
            for (input, contrib) in self.input_grads(i, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut scratch[input.0] {
                    Some(acc) => add_into(acc, &contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Reduces a gradient to a broadcast operand's shape.
    fn unbroadcast(&self, v: Var, g: Vec<T>) -> Vec<T> {
        if self.val(v).len() == 1 && g.len() != 1 {
            vec![g.iter().copied().sum()]
        } else {
            g
        }
    }

    fn binary_operand(&self, v: Var, len: usize) -> impl Fn(usize) -> T + '_ {
        let data = self.val(v).data();
        let scalar = data.len() == 1 && len != 1;
        move |i| if scalar { data[0] } else { data[i] }
    }

    fn input_grads(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[i];
        let y = node.value.data();
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        out.push((v, self.unbroadcast(v, g.to_vec())));
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    out.push((*a, self.unbroadcast(*a, g.to_vec())));
                }
                if self.wants(*b) {
                    out.push((*b, self.unbroadcast(*b, g.iter().map(|&v| -v).collect())));
                }
            }
            Op::Mul(a, b) => {
                let n = g.len();
                if self.wants(*a) {
                    let bv = self.binary_operand(*b, n);
                    let ga = (0..n).map(|k| g[k] * bv(k)).collect();
                    out.push((*a, self.unbroadcast(*a, ga)));
                }
                if self.wants(*b) {
                    let av = self.binary_operand(*a, n);
                    let gb = (0..n).map(|k| g[k] * av(k)).collect();
                    out.push((*b, self.unbroadcast(*b, gb)));
                }
            }
            Op::Scale(x, c) => out.push((*x, g.iter().map(|&v| v * *c).collect())),
            Op::AddScalar(x) | Op::Reshape(x) => out.push((*x, g.to_vec())),
            Op::Neg(x) => out.push((*x, g.iter().map(|&v| -v).collect())),
            Op::Relu(x) => {
                let xv = self.val(*x).data();
                let gx = g
                    .iter()
                    .zip(xv)
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                out.push((*x, gx));
            }
            Op::Tanh(x) => out.push((
                *x,
                g.iter().zip(y).map(|(&gv, &yv)| gv * (T::one() - yv * yv)).collect(),
            )),
            Op::Exp(x) => out.push((*x, g.iter().zip(y).map(|(&gv, &yv)| gv * yv).collect())),
            Op::Log(x) => {
                let xv = self.val(*x).data();
                out.push((*x, g.iter().zip(xv).map(|(&gv, &xv)| gv / xv).collect()));
            }
            Op::Softplus(x) => {
                let xv = self.val(*x).data();
                let gx = g
                    .iter()
                    .zip(xv)
                    .map(|(&gv, &xv)| gv / (T::one() + (-xv).exp()))
                    .collect();
                out.push((*x, gx));
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                let gm = Mat::new(g, m, n);
                if self.wants(*a) {
                    let mut ga = vec![T::zero(); m * k];
                    gemm(gm, Mat::new(bv.data(), k, n).t(), T::zero(), &mut ga);
                    out.push((*a, ga));
                }
                if self.wants(*b) {
                    let mut gb = vec![T::zero(); k * n];
                    gemm(Mat::new(av.data(), m, k).t(), gm, T::zero(), &mut gb);
                    out.push((*b, gb));
                }
            }
            Op::Transpose(x) => {
                let s = self.val(*x).shape();
                let (r, c) = (s[0], s[1]);
                let mut gx = vec![T::zero(); r * c];
                for a in 0..r {
                    for b in 0..c {
                        gx[a * c + b] = g[b * r + a];
                    }
                }
                out.push((*x, gx));
            }
            Op::Conv2d {
                input,
                kernel,
                geom,
                cols,
            } => {
                let (k, p) = (geom.k(), geom.p());
                let xv = self.val(*input).data();
                let wv = self.val(*kernel).data();
                if self.wants(*kernel) {
                    let mut gw = vec![T::zero(); geom.c_out * k];
                    for n in 0..geom.batch {
                        let gy = Mat::new(&g[n * geom.out_len()..(n + 1) * geom.out_len()], geom.c_out, p);
                        let col = if geom.is_pointwise() {
                            &xv[n * geom.in_len()..(n + 1) * geom.in_len()]
                        } else {
                            &cols[n * k * p..(n + 1) * k * p]
                        };
                        gemm(gy, Mat::new(col, k, p).t(), T::one(), &mut gw);
                    }
                    out.push((*kernel, gw));
                }
                if self.wants(*input) {
                    let mut gx = vec![T::zero(); geom.batch * geom.in_len()];
                    let mut gcols = if geom.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
                    for n in 0..geom.batch {
                        let gy = Mat::new(&g[n * geom.out_len()..(n + 1) * geom.out_len()], geom.c_out, p);
                        let wt = Mat::new(wv, geom.c_out, k).t();
                        let dst = &mut gx[n * geom.in_len()..(n + 1) * geom.in_len()];
                        if geom.is_pointwise() {
                            gemm(wt, gy, T::zero(), dst);
                        } else {
                            gemm(wt, gy, T::zero(), &mut gcols);
                            col2im(&gcols, geom, dst);
                        }
                    }
                    out.push((*input, gx));
                }
            }
            Op::BiasAdd(x, b) => {
                if self.wants(*x) {
                    out.push((*x, g.to_vec()));
                }
                if self.wants(*b) {
                    let (outer, c, inner) = axis_split(self.val(*x).shape(), 1);
                    let mut gb = vec![T::zero(); c];
                    for o in 0..outer {
                        for (ch, acc) in gb.iter_mut().enumerate() {
                            let base = (o * c + ch) * inner;
                            *acc = *acc + g[base..base + inner].iter().copied().sum();
                        }
                    }
                    out.push((*b, gb));
                }
            }
            Op::Sum { x, axis } | Op::Mean { x, axis } => {
                let xs = self.val(*x).shape();
                let is_mean = matches!(node.op, Op::Mean { .. });
                let gx = match axis {
                    None => {
                        let n = self.val(*x).len();
                        let v = if is_mean { g[0] / T::of(n as f64) } else { g[0] };
                        vec![v; n]
                    }
                    Some(ax) => {
                        let (outer, n, inner) = axis_split(xs, *ax);
                        let scale = if is_mean { T::one() / T::of(n as f64) } else { T::one() };
                        let mut gx = vec![T::zero(); outer * n * inner];
                        for o in 0..outer {
                            for j in 0..n {
                                for q in 0..inner {
                                    gx[(o * n + j) * inner + q] = g[o * inner + q] * scale;
                                }
                            }
                        }
                        gx
                    }
                };
                out.push((*x, gx));
            }
            Op::Max { x, argmax } | Op::MaxPool2 { x, argmax } => {
                let mut gx = vec![T::zero(); self.val(*x).len()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    gx[src] = gx[src] + gv;
                }
                out.push((*x, gx));
            }
            Op::Softmax { x, axis } => {
                let (outer, n, inner) = axis_split(self.val(*x).shape(), *axis);
                let mut gx = vec![T::zero(); g.len()];
                for o in 0..outer {
                    for q in 0..inner {
                        let idx = |j: usize| (o * n + j) * inner + q;
                        let dot: T = (0..n).map(|j| g[idx(j)] * y[idx(j)]).sum();
                        for j in 0..n {
                            gx[idx(j)] = y[idx(j)] * (g[idx(j)] - dot);
                        }
                    }
                }
                out.push((*x, gx));
            }
            Op::LogSoftmax { x, axis } => {
                let (outer, n, inner) = axis_split(self.val(*x).shape(), *axis);
                let mut gx = vec![T::zero(); g.len()];
                for o in 0..outer {
                    for q in 0..inner {
                        let idx = |j: usize| (o * n + j) * inner + q;
                        let total: T = (0..n).map(|j| g[idx(j)]).sum();
                        for j in 0..n {
                            gx[idx(j)] = g[idx(j)] - y[idx(j)].exp() * total;
                        }
                    }
                }
                out.push((*x, gx));
            }
            Op::GlobalAvgPool(x) => {
                let s = self.val(*x).shape();
                let plane = s[2] * s[3];
                let scale = T::one() / T::of(plane as f64);
                let gx = g
                    .iter()
                    .flat_map(|&gv| std::iter::repeat_n(gv * scale, plane))
                    .collect();
                out.push((*x, gx));
            }
            Op::AdaptiveAvgPool { x, oh, ow } => {
                let s = self.val(*x).shape();
                let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
                let mut gx = vec![T::zero(); planes * h * w];
                for pl in 0..planes {
                    for i in 0..*oh {
                        let (y0, y1) = pool_window(i, *oh, h);
                        for j in 0..*ow {
                            let (x0, x1) = pool_window(j, *ow, w);
                            let share = g[(pl * oh + i) * ow + j] / T::of(((y1 - y0) * (x1 - x0)) as f64);
                            for yy in y0..y1 {
                                for xx in x0..x1 {
                                    let at = (pl * h + yy) * w + xx;
                                    gx[at] = gx[at] + share;
                                }
                            }
                        }
                    }
                }
                out.push((*x, gx));
            }
            Op::Concat { xs, axis } => {
                let out_shape = node.value.shape();
                let (outer, _, inner) = axis_split(out_shape, *axis);
                let total = out_shape[*axis];
                let mut offset = 0;
                for &v in xs {
                    let n = self.val(v).shape()[*axis];
                    if self.wants(v) {
                        let mut gv = Vec::with_capacity(outer * n * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            gv.extend_from_slice(&g[base..base + n * inner]);
                        }
                        out.push((v, gv));
                    }
                    offset += n;
                }
            }
            Op::Gather { x, index } => {
                let s = self.val(*x).shape();
                let (rows, cols) = (s[0], s[1]);
                let per_row = index.len() / rows;
                let mut gx = vec![T::zero(); rows * cols];
                for r in 0..rows {
                    for j in 0..per_row {
                        let at = r * cols + index[r * per_row + j];
                        gx[at] = gx[at] + g[r * per_row + j];
                    }
                }
                out.push((*x, gx));
            }
            Op::SliceLeading { x, start } => {
                let xv = self.val(*x);
                let inner = xv.len() / xv.shape()[0];
                let mut gx = vec![T::zero(); xv.len()];
                gx[start * inner..start * inner + g.len()].copy_from_slice(g);
                out.push((*x, gx));
            }
            Op::L2Normalize { x, norms } => {
                let cols = node.value.shape()[1];
                let mut gx = vec![T::zero(); g.len()];
                for (r, &norm) in norms.iter().enumerate() {
                    let row = r * cols..(r + 1) * cols;
                    let dot: T = g[row.clone()].iter().zip(&y[row.clone()]).map(|(&a, &b)| a * b).sum();
                    for c in row {
                        gx[c] = (g[c] - y[c] * dot) / norm;
                    }
                }
                out.push((*x, gx));
            }
        }
        out
    }
}
