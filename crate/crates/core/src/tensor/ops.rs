//! Forward operations recorded on a [`Graph`].

use super::conv::{im2col, ConvGeom};
use super::graph::{axis_split, pool_window, Op};
use super::scalar::{gemm, Mat};
use super::{Graph, Scalar, Tensor, Var};
use crate::error::{invalid, Error, Result};

/// Elementwise operation selector for [`Graph::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Scale(f64),
    Relu,
    Tanh,
    Exp,
    Log,
    Neg,
}

/// Reduction selector for [`Graph::reduce`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    Max,
    Softmax,
    LogSoftmax,
    GlobalAvgPool,
    MaxPool2,
}

impl<T: Scalar> Graph<T> {
    /// Dispatches an elementwise operation by kind; `b` is required for the
    /// binary kinds and ignored otherwise.
    pub fn elementwise(&mut self, kind: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        let need_b = || b.ok_or_else(|| Error::InvalidArgument(format!("{kind:?} needs two operands")));
        match kind {
            Elementwise::Add => self.add(a, need_b()?),
            Elementwise::Sub => self.sub(a, need_b()?),
            Elementwise::Mul => self.mul(a, need_b()?),
            Elementwise::Scale(c) => self.scale(a, T::of(c)),
            Elementwise::Relu => self.relu(a),
            Elementwise::Tanh => self.tanh(a),
            Elementwise::Exp => self.exp(a),
            Elementwise::Log => self.log(a),
            Elementwise::Neg => self.neg(a),
        }
    }

    /// Dispatches a reduction by kind. `axis` is ignored by the pooling kinds
    /// and by `Sum`/`Mean` when `None` (full reduction).
    pub fn reduce(&mut self, kind: Reduction, x: Var, axis: Option<usize>) -> Result<Var> {
        let need_axis = || axis.ok_or_else(|| Error::InvalidArgument(format!("{kind:?} needs an axis")));
        match kind {
            Reduction::Sum => self.sum(x, axis),
            Reduction::Mean => self.mean(x, axis),
            Reduction::Max => self.max(x, need_axis()?),
            Reduction::Softmax => self.softmax(x, need_axis()?),
            Reduction::LogSoftmax => self.log_softmax(x, need_axis()?),
            Reduction::GlobalAvgPool => self.global_avg_pool(x),
            Reduction::MaxPool2 => self.max_pool2(x),
        }
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(Tensor<T>, Vec<usize>)> {
        let (av, bv) = (self.value(a), self.value(b));
        let shape = if av.shape() == bv.shape() || bv.len() == 1 {
            av.shape().to_vec()
        } else if av.len() == 1 {
            bv.shape().to_vec()
        } else {
            return Err(Error::ShapeMismatch {
                op: name,
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        };
        let n = av.len().max(bv.len());
        let (ad, bd) = (av.data(), bv.data());
        let pick = |d: &[T], i: usize| if d.len() == 1 { d[0] } else { d[i] };
        let data = (0..n).map(|i| f(pick(ad, i), pick(bd, i))).collect();
        Ok((Tensor::new(shape.clone(), data)?, shape))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, _) = self.binary("add", a, b, |x, y| x + y)?;
        self.push("add", v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, _) = self.binary("sub", a, b, |x, y| x - y)?;
        self.push("sub", v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, _) = self.binary("mul", a, b, |x, y| x * y)?;
        self.push("mul", v, Op::Mul(a, b), &[a, b])
    }

    fn unary(&mut self, name: &'static str, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var> {
        let v = self.value(x).map(f);
        self.push(name, v, op, &[x])
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        self.unary("scale", x, Op::Scale(x, c), |v| v * c)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        self.unary("add_scalar", x, Op::AddScalar(x), |v| v + c)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary("neg", x, Op::Neg(x), |v| -v)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, Op::Relu(x), |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, Op::Tanh(x), |v| v.tanh())
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, Op::Exp(x), |v| v.exp())
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).data().iter().find(|&&v| v <= T::zero()) {
            return Err(Error::NonPositiveLog(bad.as_f64()));
        }
        self.unary("log", x, Op::Log(x), |v| v.ln())
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary("softplus", x, Op::Softplus(x), |v| {
            v.max(T::zero()) + (-v.abs()).exp().ln_1p()
        })
    }

    fn expect_rank(&self, name: &'static str, x: Var, rank: usize) -> Result<&[usize]> {
        let s = self.shape(x);
        if s.len() != rank {
            return invalid(format!("{name}: expected rank {rank}, got shape {s:?}"));
        }
        Ok(s)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.expect_rank("matmul", a, 2)?.to_vec();
        let sb = self.expect_rank("matmul", b, 2)?.to_vec();
        if sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut data = vec![T::zero(); m * n];
        gemm(
            Mat::new(self.value(a).data(), m, k),
            Mat::new(self.value(b).data(), k, n),
            T::zero(),
            &mut data,
        );
        let v = Tensor::new(vec![m, n], data)?;
        self.push("matmul", v, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.expect_rank("transpose", x, 2)?.to_vec();
        let (r, c) = (s[0], s[1]);
        let xd = self.value(x).data();
        let mut data = vec![T::zero(); r * c];
        for a in 0..r {
            for b in 0..c {
                data[b * r + a] = xd[a * c + b];
            }
        }
        let v = Tensor::new(vec![c, r], data)?;
        self.push("transpose", v, Op::Transpose(x), &[x])
    }

    /// 2-D cross-correlation (no kernel flip).
    ///
    /// `input` is `C_in×H×W` or `N×C_in×H×W`; `kernel` is `C_out×C_in×kh×kw`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let s = self.shape(input).to_vec();
        let (batched, batch, c_in, h, w) = match s.as_slice() {
            [c, h, w] => (false, 1, *c, *h, *w),
            [n, c, h, w] => (true, *n, *c, *h, *w),
            _ => return invalid(format!("conv2d: input must be rank 3 or 4, got {s:?}")),
        };
        let ks = self.expect_rank("conv2d", kernel, 4)?.to_vec();
        if ks[1] != c_in {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: s,
                rhs: ks,
            });
        }
        if stride == 0 {
            return invalid("conv2d: stride must be positive");
        }
        let (c_out, kh, kw) = (ks[0], ks[2], ks[3]);
        let out_dim = |inp: usize, k: usize| -> Result<usize> {
            let span = inp + 2 * padding;
            if span < k || (span - k) % stride != 0 {
                return invalid(format!(
                    "conv2d: non-integral output size for extent {inp}, kernel {k}, stride {stride}, padding {padding}"
                ));
            }
            Ok((span - k) / stride + 1)
        };
        let geom = ConvGeom {
            batch,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad: padding,
            oh: out_dim(h, kh)?,
            ow: out_dim(w, kw)?,
        };
        let (k, p) = (geom.k(), geom.p());
        let xd = self.value(input).data();
        let wd = self.value(kernel).data();
        let mut out = vec![T::zero(); batch * geom.out_len()];
        let mut cols = if geom.is_pointwise() { Vec::new() } else { vec![T::zero(); batch * k * p] };
        for n in 0..batch {
            let img = &xd[n * geom.in_len()..(n + 1) * geom.in_len()];
            let col: &[T] = if geom.is_pointwise() {
                img
            } else {
                let dst = &mut cols[n * k * p..(n + 1) * k * p];
                im2col(img, &geom, dst);
                dst
            };
            gemm(
                Mat::new(wd, c_out, k),
                Mat::new(col, k, p),
                T::zero(),
                &mut out[n * geom.out_len()..(n + 1) * geom.out_len()],
            );
        }
        let shape = if batched {
            vec![batch, c_out, geom.oh, geom.ow]
        } else {
            vec![c_out, geom.oh, geom.ow]
        };
        // only the kernel gradient reads the unfolded input
        if !self.requires_grad(kernel) {
            cols = Vec::new();
        }
        let v = Tensor::new(shape, out)?;
        self.push(
            "conv2d",
            v,
            Op::Conv2d {
                input,
                kernel,
                geom,
                cols,
            },
            &[input, kernel],
        )
    }

    /// Adds `bias` (length = extent of axis 1) broadcast over every other axis.
    pub fn bias_add(&mut self, x: Var, bias: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let bs = self.shape(bias).to_vec();
        if s.len() < 2 || bs.len() != 1 || bs[0] != s[1] {
            return Err(Error::ShapeMismatch {
                op: "bias_add",
                lhs: s,
                rhs: bs,
            });
        }
        let (outer, c, inner) = axis_split(&s, 1);
        let bd = self.value(bias).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for o in 0..outer {
            for (ch, &b) in bd.iter().enumerate() {
                let base = (o * c + ch) * inner;
                for v in &mut data[base..base + inner] {
                    *v = *v + b;
                }
            }
        }
        let v = Tensor::new(s, data)?;
        self.push("bias_add", v, Op::BiasAdd(x, bias), &[x, bias])
    }

    fn check_axis(&self, name: &'static str, x: Var, axis: usize) -> Result<()> {
        let rank = self.shape(x).len();
        if axis >= rank {
            return Err(Error::InvalidAxis { op: name, axis, rank });
        }
        Ok(())
    }

    fn reduced(&self, x: Var, axis: Option<usize>, f: impl Fn(&mut dyn Iterator<Item = T>) -> T) -> Tensor<T> {
        let xv = self.value(x);
        match axis {
            None => Tensor::scalar(f(&mut xv.data().iter().copied())),
            Some(ax) => {
                let (outer, n, inner) = axis_split(xv.shape(), ax);
                let d = xv.data();
                let mut data = Vec::with_capacity(outer * inner);
                for o in 0..outer {
                    for q in 0..inner {
                        data.push(f(&mut (0..n).map(|j| d[(o * n + j) * inner + q])));
                    }
                }
                let mut shape = xv.shape().to_vec();
                shape.remove(ax);
                Tensor::new(shape, data).expect("reduced shape")
            }
        }
    }

    /// Sum over `axis`, or over everything when `None`.
    pub fn sum(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        if let Some(ax) = axis {
            self.check_axis("sum", x, ax)?;
        }
        let v = self.reduced(x, axis, |it| it.sum());
        self.push("sum", v, Op::Sum { x, axis }, &[x])
    }

    pub fn mean(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        if let Some(ax) = axis {
            self.check_axis("mean", x, ax)?;
        }
        let n = match axis {
            None => self.value(x).len(),
            Some(ax) => self.shape(x)[ax],
        };
        let inv = T::one() / T::of(n as f64);
        let v = self.reduced(x, axis, |it| it.sum::<T>() * inv);
        self.push("mean", v, Op::Mean { x, axis }, &[x])
    }

    /// Maximum along `axis`; ties route the gradient to the first maximum.
    pub fn max(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("max", x, axis)?;
        let xv = self.value(x);
        let (outer, n, inner) = axis_split(xv.shape(), axis);
        let d = xv.data();
        let mut data = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for q in 0..inner {
                let mut best = (o * n) * inner + q;
                for j in 1..n {
                    let at = (o * n + j) * inner + q;
                    if d[at] > d[best] {
                        best = at;
                    }
                }
                data.push(d[best]);
                argmax.push(best);
            }
        }
        let mut shape = xv.shape().to_vec();
        shape.remove(axis);
        let v = Tensor::new(shape, data)?;
        self.push("max", v, Op::Max { x, argmax }, &[x])
    }

    fn softmax_like(&self, x: Var, axis: usize, log: bool) -> Tensor<T> {
        let xv = self.value(x);
        let (outer, n, inner) = axis_split(xv.shape(), axis);
        let d = xv.data();
        let mut data = vec![T::zero(); d.len()];
        for o in 0..outer {
            for q in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + q;
                let m = (0..n).map(|j| d[idx(j)]).fold(T::neg_infinity(), T::max);
                let z: T = (0..n).map(|j| (d[idx(j)] - m).exp()).sum();
                let lz = z.ln();
                for j in 0..n {
                    let shifted = d[idx(j)] - m;
                    data[idx(j)] = if log { shifted - lz } else { shifted.exp() / z };
                }
            }
        }
        Tensor::new(xv.shape().to_vec(), data).expect("same shape")
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", x, axis)?;
        let v = self.softmax_like(x, axis, false);
        self.push("softmax", v, Op::Softmax { x, axis }, &[x])
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("log_softmax", x, axis)?;
        let v = self.softmax_like(x, axis, true);
        self.push("log_softmax", v, Op::LogSoftmax { x, axis }, &[x])
    }

    /// `N×C×H×W → N×C` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.expect_rank("global_avg_pool", x, 4)?.to_vec();
        let plane = s[2] * s[3];
        let inv = T::one() / T::of(plane as f64);
        let data = self
            .value(x)
            .data()
            .chunks_exact(plane)
            .map(|c| c.iter().copied().sum::<T>() * inv)
            .collect();
        let v = Tensor::new(vec![s[0], s[1]], data)?;
        self.push("global_avg_pool", v, Op::GlobalAvgPool(x), &[x])
    }

    /// 2×2 max pooling with stride 2 on `N×C×H×W` (even `H`, `W`).
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let s = self.expect_rank("max_pool2", x, 4)?.to_vec();
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        if h % 2 != 0 || w % 2 != 0 {
            return invalid(format!("max_pool2: odd spatial dims {h}×{w}"));
        }
        let (oh, ow) = (h / 2, w / 2);
        let d = self.value(x).data();
        let mut data = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for pl in 0..planes {
            let base = pl * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let top = base + 2 * i * w + 2 * j;
                    let mut best = top;
                    for at in [top + 1, top + w, top + w + 1] {
                        if d[at] > d[best] {
                            best = at;
                        }
                    }
                    data.push(d[best]);
                    argmax.push(best);
                }
            }
        }
        let v = Tensor::new(vec![s[0], s[1], oh, ow], data)?;
        self.push("max_pool2", v, Op::MaxPool2 { x, argmax }, &[x])
    }

    /// Average pooling of `N×C×H×W` onto an `oh×ow` grid with
    /// floor/ceil window bounds.
    pub fn adaptive_avg_pool(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let s = self.expect_rank("adaptive_avg_pool", x, 4)?.to_vec();
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        if oh == 0 || ow == 0 || oh > h || ow > w {
            return invalid(format!("adaptive_avg_pool: cannot pool {h}×{w} to {oh}×{ow}"));
        }
        let d = self.value(x).data();
        let mut data = Vec::with_capacity(planes * oh * ow);
        for pl in 0..planes {
            for i in 0..oh {
                let (y0, y1) = pool_window(i, oh, h);
                for j in 0..ow {
                    let (x0, x1) = pool_window(j, ow, w);
                    let mut acc = T::zero();
                    for yy in y0..y1 {
                        for xx in x0..x1 {
                            acc = acc + d[(pl * h + yy) * w + xx];
                        }
                    }
                    data.push(acc / T::of(((y1 - y0) * (x1 - x0)) as f64));
                }
            }
        }
        let v = Tensor::new(vec![s[0], s[1], oh, ow], data)?;
        self.push("adaptive_avg_pool", v, Op::AdaptiveAvgPool { x, oh, ow }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape.to_vec())?;
        self.push("reshape", v, Op::Reshape(x), &[x])
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        self.check_axis("concat", first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let n = self.shape(v)[axis];
                let d = self.value(v).data();
                data.extend_from_slice(&d[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let v = Tensor::new(shape, data)?;
        self.push("concat", v, Op::Concat { xs: xs.to_vec(), axis }, xs)
    }

    /// Row-wise gather: `x` is `R×C`, `index` holds `m` column indices per
    /// row (row-major `R×m`); the result is `R×m`.
    pub fn gather(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let s = self.expect_rank("gather", x, 2)?.to_vec();
        let (rows, cols) = (s[0], s[1]);
        if index.is_empty() || index.len() % rows != 0 {
            return invalid(format!("gather: {} indices for {rows} rows", index.len()));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= cols) {
            return invalid(format!("gather: column {bad} out of range for {cols} columns"));
        }
        let per_row = index.len() / rows;
        let d = self.value(x).data();
        let data = (0..rows)
            .flat_map(|r| (0..per_row).map(move |j| (r, j)))
            .map(|(r, j)| d[r * cols + index[r * per_row + j]])
            .collect();
        let v = Tensor::new(vec![rows, per_row], data)?;
        self.push(
            "gather",
            v,
            Op::Gather {
                x,
                index: index.to_vec(),
            },
            &[x],
        )
    }

    /// Entries `start..end` along the leading axis.
    pub fn slice_leading(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(x).slice_leading(start, end)?;
        self.push("slice_leading", v, Op::SliceLeading { x, start }, &[x])
    }

    /// Scales every row of an `R×C` matrix to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let s = self.expect_rank("l2_normalize", x, 2)?.to_vec();
        let cols = s[1];
        let d = self.value(x).data();
        let mut norms = Vec::with_capacity(s[0]);
        let mut data = Vec::with_capacity(d.len());
        for row in d.chunks_exact(cols) {
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            if norm <= T::zero() {
                return invalid("l2_normalize: zero row has no direction");
            }
            norms.push(norm);
            data.extend(row.iter().map(|&v| v / norm));
        }
        let v = Tensor::new(s, data)?;
        self.push("l2_normalize", v, Op::L2Normalize { x, norms }, &[x])
    }
}
