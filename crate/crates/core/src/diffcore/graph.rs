//! Define-by-run tape. Every op appends a node holding its value and the
//! inputs (plus any activations) its adjoint rule needs; `backward` walks the
//! nodes once in reverse insertion order, which is a topological order.

use super::kernels::{col2im_add, gemm, im2col, swap_leading, ConvGeometry, Layout};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Conv2d { input: Var, weight: Var, geom: ConvGeometry, cols: Vec<f64> },
    Relu(Var),
    Exp(Var),
    Log(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    Reshape(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    SelectRows { x: Var, rows: Vec<usize> },
    AvgPool2d { x: Var, k: usize },
    LogSoftmax(Var),
    Broadcast(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Visits a broadcast as runs: `f(dst_offset, src_offset, src_step, len)`
/// covers `len` consecutive destination elements read from `src_offset` with
/// stride `src_step` (0 where the source repeats).
fn broadcast_runs(src: &[usize], dst: &[usize], mut f: impl FnMut(usize, usize, usize, usize)) {
    let mut padded = vec![1; dst.len() - src.len()];
    padded.extend_from_slice(src);
    let src_strides = strides(&padded);
    // Fold trailing dims that are all repeated or all copied into one run.
    let mut split = dst.len();
    let mut run = 1;
    let mut step = None;
    while split > 0 {
        let d = split - 1;
        let kind = if dst[d] == 1 { None } else { Some(usize::from(padded[d] != 1)) };
        match (step, kind) {
            (_, None) => {}
            (None, Some(k)) => step = Some(k),
            (Some(a), Some(k)) if a == k => {}
            _ => break,
        }
        run *= dst[d];
        split = d;
    }
    let step = step.unwrap_or(0);
    let outer = &dst[..split];
    let count: usize = outer.iter().product();
    let mut idx = vec![0usize; split];
    for r in 0..count {
        let src_off = idx.iter().enumerate().filter(|&(d, _)| padded[d] != 1).map(|(d, &i)| i * src_strides[d]).sum();
        f(r * run, src_off, step, run);
        for d in (0..split).rev() {
            idx[d] += 1;
            if idx[d] < outer[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape(), data).expect("shapes checked")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let va = self.value(a);
        Tensor::new(va.shape(), va.data().iter().map(|&x| f(x)).collect()).expect("same length")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.map(a, |x| x * c);
        self.push(v, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.map(a, |x| x + c);
        self.push(v, Op::AddScalar(a), &[a])
    }

    /// `[m, k] · [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), Layout::Normal, self.value(b).data(), Layout::Normal, 0.0, &mut out);
        let v = Tensor::new(&[m, n], out)?;
        Ok(self.push(v, Op::MatMul(a, b), &[a, b]))
    }

    /// 2D cross-correlation of `[N, C, H, W]` input with `[O, C, kh, kw]`
    /// weights, zero padding `pad` on every side.
    pub fn conv2d(&mut self, input: Var, weight: Var, stride: usize, pad: usize) -> Result<Var> {
        let (si, sw) = (self.shape(input), self.shape(weight));
        if si.len() != 4 || sw.len() != 4 || si[1] != sw[1] || stride == 0 {
            return Err(Error::shape("conv2d", si, sw));
        }
        let (n, c, h, w) = (si[0], si[1], si[2], si[3]);
        let (o, kh, kw) = (sw[0], sw[2], sw[3]);
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape("conv2d", si, sw));
        }
        let geom = ConvGeometry {
            batch: n,
            in_channels: c,
            height: h,
            width: w,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            pad,
            out_h: (h + 2 * pad - kh) / stride + 1,
            out_w: (w + 2 * pad - kw) / stride + 1,
        };
        let cols = im2col(self.value(input).data(), &geom);
        let (k, p) = (geom.rows(), geom.cols());
        let mut out = vec![0.0; o * p];
        gemm(o, k, p, self.value(weight).data(), Layout::Normal, &cols, Layout::Normal, 0.0, &mut out);
        let plane = geom.out_h * geom.out_w;
        let out = swap_leading(&out, o, n, plane);
        let v = Tensor::new(&[n, o, geom.out_h, geom.out_w], out)?;
        let op = Op::Conv2d { input, weight, geom, cols };
        Ok(self.push(v, op, &[input, weight]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.map(a, |x| x.max(0.0));
        self.push(v, Op::Relu(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.map(a, f64::exp);
        self.push(v, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.map(a, f64::ln);
        self.push(v, Op::Log(a), &[a])
    }

    /// Clamp into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.map(a, |x| x.clamp(lo, hi));
        self.push(v, Op::Clamp { x: a, lo, hi }, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Sum over the last axis.
    pub fn sum_last(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let Some((&last, lead)) = shape.split_last() else {
            return Err(Error::shape("sum_last", &shape, &[1]));
        };
        let data: Vec<f64> = if last == 0 {
            vec![0.0; lead.iter().product()]
        } else {
            self.value(a).data().chunks(last).map(|r| r.iter().sum()).collect()
        };
        let v = Tensor::new(lead, data)?;
        Ok(self.push(v, Op::SumLast(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(v, Op::Reshape(a), &[a]))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", &base, &[axis]));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let v = Tensor::new(&shape, data)?;
        let op = Op::Concat { inputs: inputs.to_vec(), axis };
        Ok(self.push(v, op, inputs))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::shape("narrow", &shape, &[axis, start, len]));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let off = (o * shape[axis] + start) * inner;
            data.extend_from_slice(&src[off..off + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let v = Tensor::new(&out_shape, data)?;
        Ok(self.push(v, Op::Narrow { x: a, axis, start }, &[a]))
    }

    /// Gather rows along the leading axis.
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.is_empty() || rows.iter().any(|&r| r >= shape[0]) {
            return Err(Error::shape("select_rows", &shape, rows));
        }
        let inner: usize = shape[1..].iter().product();
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(rows.len() * inner);
        for &r in rows {
            data.extend_from_slice(&src[r * inner..(r + 1) * inner]);
        }
        let mut out_shape = shape;
        out_shape[0] = rows.len();
        let v = Tensor::new(&out_shape, data)?;
        let op = Op::SelectRows { x: a, rows: rows.to_vec() };
        Ok(self.push(v, op, &[a]))
    }

    /// Non-overlapping `k×k` average pooling over `[N, C, H, W]`.
    pub fn avgpool2d(&mut self, a: Var, k: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 4 || k == 0 || shape[2] % k != 0 || shape[3] % k != 0 {
            return Err(Error::shape("avgpool2d", &shape, &[k, k]));
        }
        let (nc, h, w) = (shape[0] * shape[1], shape[2], shape[3]);
        let (oh, ow) = (h / k, w / k);
        let src = self.value(a).data();
        let norm = 1.0 / (k * k) as f64;
        let mut data = vec![0.0; nc * oh * ow];
        for p in 0..nc {
            let plane = &src[p * h * w..(p + 1) * h * w];
            let dst = &mut data[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..h {
                for x in 0..w {
                    dst[(y / k) * ow + x / k] += plane[y * w + x];
                }
            }
            dst.iter_mut().for_each(|v| *v *= norm);
        }
        let v = Tensor::new(&[shape[0], shape[1], oh, ow], data)?;
        Ok(self.push(v, Op::AvgPool2d { x: a, k }, &[a]))
    }

    /// Log-softmax over the last axis, computed through log-sum-exp.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let last = *shape.last().ok_or_else(|| Error::shape("log_softmax", &shape, &[1]))?;
        let mut data = self.value(a).data().to_vec();
        if last > 0 {
            for row in data.chunks_mut(last) {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
                row.iter_mut().for_each(|x| *x -= lse);
            }
        }
        let v = Tensor::new(&shape, data)?;
        Ok(self.push(v, Op::LogSoftmax(a), &[a]))
    }

    /// Numpy-style broadcast to `shape`.
    pub fn broadcast(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let src = self.shape(a).to_vec();
        let ok = src.len() <= shape.len()
            && src.iter().zip(&shape[shape.len() - src.len()..]).all(|(&s, &d)| s == d || s == 1);
        if !ok {
            return Err(Error::shape("broadcast", &src, shape));
        }
        let vals = self.value(a).data();
        let mut data = vec![0.0; shape.iter().product()];
        broadcast_runs(&src, shape, |d, s, step, len| {
            for (i, out) in data[d..d + len].iter_mut().enumerate() {
                *out = vals[s + i * step];
            }
        });
        let v = Tensor::new(shape, data)?;
        Ok(self.push(v, Op::Broadcast(a), &[a]))
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!("backward needs a scalar loss, got shape {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| g.map(|d| Tensor::new(node.value.shape(), d).expect("gradient matches value")))
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(slot);
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |s| add_into(s, g));
                self.accumulate(grads, *b, |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |s| add_into(s, g));
                self.accumulate(grads, *b, |s| s.iter_mut().zip(g).for_each(|(s, g)| *s -= g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * vb[i];
                    }
                });
                self.accumulate(grads, *b, |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * va[i];
                    }
                });
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += c * g)),
            Op::AddScalar(a) | Op::Reshape(a) => self.accumulate(grads, *a, |s| add_into(s, g)),
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |s| gemm(m, n, k, g, Layout::Normal, vb, Layout::Transposed, 1.0, s));
                self.accumulate(grads, *b, |s| gemm(k, m, n, va, Layout::Transposed, g, Layout::Normal, 1.0, s));
            }
            Op::Conv2d { input, weight, geom, cols } => {
                let o = self.shape(*weight)[0];
                let plane = geom.out_h * geom.out_w;
                let (k, p) = (geom.rows(), geom.cols());
                // [N, O, P] -> [O, N·P] to match the patch matrix layout.
                let gm = swap_leading(g, geom.batch, o, plane);
                self.accumulate(grads, *weight, |s| {
                    gemm(o, p, k, &gm, Layout::Normal, cols, Layout::Transposed, 1.0, s)
                });
                if self.nodes[input.0].needs_grad {
                    let mut dcols = vec![0.0; k * p];
                    let wv = self.value(*weight).data();
                    gemm(k, o, p, wv, Layout::Transposed, &gm, Layout::Normal, 0.0, &mut dcols);
                    self.accumulate(grads, *input, |s| col2im_add(&dcols, geom, s));
                }
            }
            Op::Relu(a) => {
                let va = self.value(*a).data();
                self.accumulate(grads, *a, |s| {
                    for i in 0..s.len() {
                        if va[i] > 0.0 {
                            s[i] += g[i];
                        }
                    }
                });
            }
            Op::Exp(a) => self.accumulate(grads, *a, |s| {
                for i in 0..s.len() {
                    s[i] += g[i] * out[i];
                }
            }),
            Op::Log(a) => {
                let va = self.value(*a).data();
                self.accumulate(grads, *a, |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] / va[i];
                    }
                });
            }
            Op::Clamp { x, lo, hi } => {
                let va = self.value(*x).data();
                self.accumulate(grads, *x, |s| {
                    for i in 0..s.len() {
                        if va[i] >= *lo && va[i] <= *hi {
                            s[i] += g[i];
                        }
                    }
                });
            }
            Op::Sum(a) => self.accumulate(grads, *a, |s| s.iter_mut().for_each(|v| *v += g[0])),
            Op::Mean(a) => {
                let d = g[0] / self.value(*a).len() as f64;
                self.accumulate(grads, *a, |s| s.iter_mut().for_each(|v| *v += d));
            }
            Op::SumLast(a) => {
                let last = *self.shape(*a).last().expect("checked at forward");
                self.accumulate(grads, *a, |s| {
                    if last == 0 {
                        return;
                    }
                    for (row, gi) in s.chunks_mut(last).zip(g) {
                        row.iter_mut().for_each(|v| *v += gi);
                    }
                });
            }
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let row = shape[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let len = self.shape(v)[*axis] * inner;
                    self.accumulate(grads, v, |s| {
                        for o in 0..outer {
                            let src = &g[o * row + offset..o * row + offset + len];
                            add_into(&mut s[o * len..(o + 1) * len], src);
                        }
                    });
                    offset += len;
                }
            }
            Op::Narrow { x, axis, start } => {
                let shape = self.shape(*x);
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let len = node.value.shape()[*axis] * inner;
                let full = shape[*axis];
                self.accumulate(grads, *x, |s| {
                    for o in 0..outer {
                        let off = (o * full + start) * inner;
                        add_into(&mut s[off..off + len], &g[o * len..(o + 1) * len]);
                    }
                });
            }
            Op::SelectRows { x, rows } => {
                let inner: usize = self.shape(*x)[1..].iter().product();
                self.accumulate(grads, *x, |s| {
                    for (i, &r) in rows.iter().enumerate() {
                        add_into(&mut s[r * inner..(r + 1) * inner], &g[i * inner..(i + 1) * inner]);
                    }
                });
            }
            Op::AvgPool2d { x, k } => {
                let shape = self.shape(*x);
                let (nc, h, w) = (shape[0] * shape[1], shape[2], shape[3]);
                let (oh, ow) = (h / k, w / k);
                let norm = 1.0 / (k * k) as f64;
                self.accumulate(grads, *x, |s| {
                    for p in 0..nc {
                        let gp = &g[p * oh * ow..(p + 1) * oh * ow];
                        let sp = &mut s[p * h * w..(p + 1) * h * w];
                        for y in 0..h {
                            for xx in 0..w {
                                sp[y * w + xx] += gp[(y / k) * ow + xx / k] * norm;
                            }
                        }
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let last = *node.value.shape().last().expect("checked at forward");
                self.accumulate(grads, *a, |s| {
                    if last == 0 {
                        return;
                    }
                    for ((srow, grow), orow) in s.chunks_mut(last).zip(g.chunks(last)).zip(out.chunks(last)) {
                        let total: f64 = grow.iter().sum();
                        for i in 0..last {
                            srow[i] += grow[i] - orow[i].exp() * total;
                        }
                    }
                });
            }
            Op::Broadcast(a) => {
                self.accumulate(grads, *a, |s| {
                    broadcast_runs(self.shape(*a), node.value.shape(), |d, src, step, len| {
                        for (i, gi) in g[d..d + len].iter().enumerate() {
                            s[src + i * step] += gi;
                        }
                    });
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}
