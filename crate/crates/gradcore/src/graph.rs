use crate::error::{invalid, mismatch, Result};
use crate::kernels::{col2im3, gemm, im2col3};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
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
    Affine(Var, f64),
    MulScalar(Var, Var),
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Transpose(Var),
    Reshape(Var),
    Conv2d { x: Var, w: Var },
    MaxPool2 { x: Var, argmax: Vec<usize> },
    Upsample2(Var),
    Relu(Var),
    Softmax { x: Var, axis: usize },
    Log(Var),
    Exp(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Sum(Var),
    Mean(Var),
    MeanAxis { x: Var, axis: usize },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    AddBias { x: Var, b: Var, axis: usize },
    MaskMul { x: Var, mask: Vec<f64> },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Eager computation graph. Nodes are appended in evaluation order.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`]. Nodes that do not require a
/// gradient have none.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

/// Splits a shape around `axis` into (outer, len, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn nchw(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match shape {
        &[n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(invalid(op, format!("expected an NCHW tensor, got {shape:?}"))),
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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
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

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch(op, sa, sb));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data).expect("shape preserved")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        Tensor::new(t.shape(), t.data().iter().map(|&x| f(x)).collect()).expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    /// `scale·a + shift` with constant scale and shift.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let v = self.map(a, |x| scale * x + shift);
        self.push(v, Op::Affine(a, scale), &[a])
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Var {
        self.affine(a, scale, 0.0)
    }

    /// Multiplies every element of `a` by the one-element tensor `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(invalid("mul_scalar", format!("scale has shape {:?}", self.shape(s))));
        }
        let k = self.value(s).item();
        let v = self.map(a, |x| x * k);
        Ok(self.push(v, Op::MulScalar(a, s), &[a, s]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (m, k, n) = match (sa.as_slice(), sb.as_slice()) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            _ => return Err(mismatch("matmul", &sa, &sb)),
        };
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        let v = Tensor::new(vec![m, n], out)?;
        Ok(self.push(v, Op::MatMul { a, b, m, k, n }, &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = match self.shape(a) {
            &[m, n] => (m, n),
            s => return Err(invalid("transpose", format!("expected a matrix, got {s:?}"))),
        };
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let v = Tensor::new(vec![n, m], out)?;
        Ok(self.push(v, Op::Transpose(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshaped(shape.to_vec())?;
        Ok(self.push(v, Op::Reshape(a), &[a]))
    }

    /// 3×3 convolution, stride 1, zero padding 1. `x` is N×C×H×W and `w` is
    /// O×C×3×3; bias is applied separately with [`Graph::add_bias`].
    pub fn conv2d(&mut self, x: Var, w: Var) -> Result<Var> {
        let (n, c, h, wd) = nchw("conv2d", self.shape(x))?;
        let o = match self.shape(w) {
            &[o, c2, 3, 3] if c2 == c => o,
            s => return Err(mismatch("conv2d", self.shape(x), s)),
        };
        let hw = h * wd;
        let mut out = vec![0.0; n * o * hw];
        let mut cols = vec![0.0; c * 9 * hw];
        let (xs, ws) = (self.value(x).data(), self.value(w).data());
        for s in 0..n {
            im2col3(&xs[s * c * hw..(s + 1) * c * hw], c, h, wd, &mut cols);
            gemm(o, c * 9, hw, ws, false, &cols, false, &mut out[s * o * hw..(s + 1) * o * hw], false);
        }
        let v = Tensor::new(vec![n, o, h, wd], out)?;
        Ok(self.push(v, Op::Conv2d { x, w }, &[x, w]))
    }

    /// 2×2 max pooling with stride 2. Ties route the gradient to the first
    /// maximum in row-major order.
    pub fn maxpool2d(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = nchw("maxpool2d", self.shape(x))?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(invalid("maxpool2d", format!("odd spatial size {h}x{w}")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = base + 2 * y * w + 2 * xx;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * y + dy) * w + 2 * xx + dx;
                        if src[i] > src[best] {
                            best = i;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        let v = Tensor::new(vec![n, c, oh, ow], out)?;
        Ok(self.push(v, Op::MaxPool2 { x, argmax }, &[x]))
    }

    /// Nearest-neighbour 2× spatial upsampling of an NCHW tensor.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = nchw("upsample2x", self.shape(x))?;
        let src = self.value(x).data();
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![0.0; n * c * oh * ow];
        for plane in 0..n * c {
            for y in 0..oh {
                for xx in 0..ow {
                    out[plane * oh * ow + y * ow + xx] = src[plane * h * w + (y / 2) * w + xx / 2];
                }
            }
        }
        let v = Tensor::new(vec![n, c, oh, ow], out)?;
        Ok(self.push(v, Op::Upsample2(x), &[x]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.map(a, |x| x.max(0.0));
        self.push(v, Op::Relu(a), &[a])
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(invalid("softmax", format!("axis {axis} for shape {shape:?}")));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| src[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (src[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[idx(j)] /= total;
                }
            }
        }
        let v = Tensor::new(shape, out)?;
        Ok(self.push(v, Op::Softmax { x: a, axis }, &[a]))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.map(a, f64::ln);
        self.push(v, Op::Log(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.map(a, f64::exp);
        self.push(v, Op::Exp(a), &[a])
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
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
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(invalid("mean_axis", format!("axis {axis} for shape {shape:?}")));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += src[(o * len + j) * inner + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= len as f64);
        let mut new_shape = shape;
        new_shape.remove(axis);
        if new_shape.is_empty() {
            new_shape.push(1);
        }
        let v = Tensor::new(new_shape, out)?;
        Ok(self.push(v, Op::MeanAxis { x: a, axis }, &[a]))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| invalid("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(invalid("concat", format!("axis {axis} for shape {base:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(mismatch("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let len = t.shape()[axis];
                out.extend_from_slice(&t.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let v = Tensor::new(shape, out)?;
        Ok(self.push(
            v,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    /// Elements `start..start + len` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(invalid(
                "slice",
                format!("{start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, full, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * full + start) * inner;
            out.extend_from_slice(&src[from..from + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let v = Tensor::new(new_shape, out)?;
        Ok(self.push(v, Op::Slice { x: a, axis, start }, &[a]))
    }

    /// Adds `b` broadcast over every dimension of `x` outside
    /// `axis..axis + b.ndim`, where `b`'s shape must match those dimensions.
    pub fn add_bias(&mut self, x: Var, b: Var, axis: usize) -> Result<Var> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(b).to_vec());
        if axis + sb.len() > sx.len() || sx[axis..axis + sb.len()] != sb[..] {
            return Err(mismatch("add_bias", &sx, &sb));
        }
        let (outer, mid, inner) = bias_extents(&sx, axis, sb.len());
        let (xs, bs) = (self.value(x).data(), self.value(b).data());
        let mut out = xs.to_vec();
        for o in 0..outer {
            for m in 0..mid {
                let base = (o * mid + m) * inner;
                for v in &mut out[base..base + inner] {
                    *v += bs[m];
                }
            }
        }
        let v = Tensor::new(sx, out)?;
        Ok(self.push(v, Op::AddBias { x, b, axis }, &[x, b]))
    }

    /// Multiplies `x` by a constant mask whose shape equals the trailing
    /// dimensions of `x`, broadcasting over the leading ones.
    pub fn mask_mul(&mut self, x: Var, mask: &Tensor) -> Result<Var> {
        let sx = self.shape(x);
        let sm = mask.shape();
        if sm.len() > sx.len() || sx[sx.len() - sm.len()..] != sm[..] {
            return Err(mismatch("mask_mul", sx, sm));
        }
        let m = mask.data();
        let out: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * m[i % m.len()])
            .collect();
        let v = Tensor::new(sx.to_vec(), out)?;
        Ok(self.push(
            v,
            Op::MaskMul {
                x,
                mask: m.to_vec(),
            },
            &[x],
        ))
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(invalid(
                "backward",
                format!("loss must be a scalar, got {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| {
                g.filter(|_| node.requires_grad)
                    .map(|d| Tensor::new(node.value.shape(), d).expect("grad shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], target: Var, f: impl FnOnce(&mut [f64])) {
        let node = &self.nodes[target.0];
        if !node.requires_grad {
            return;
        }
        let buf = grads[target.0].get_or_insert_with(|| vec![0.0; node.value.numel()]);
        f(buf);
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |d| add_into(d, g));
                self.accumulate(grads, *b, |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |d| add_into(d, g));
                self.accumulate(grads, *b, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * vb[i];
                    }
                });
                self.accumulate(grads, *b, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * va[i];
                    }
                });
            }
            Op::Affine(a, scale) => {
                self.accumulate(grads, *a, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += scale * g));
            }
            Op::MulScalar(a, s) => {
                let k = self.value(*s).item();
                let va = self.value(*a).data();
                self.accumulate(grads, *a, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += k * g));
                self.accumulate(grads, *s, |d| {
                    d[0] += g.iter().zip(va).map(|(g, x)| g * x).sum::<f64>();
                });
            }
            Op::MatMul { a, b, m, k, n } => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |d| gemm(*m, *n, *k, g, false, vb, true, d, true));
                self.accumulate(grads, *b, |d| gemm(*k, *m, *n, va, true, g, false, d, true));
            }
            Op::Transpose(a) => {
                let (m, n) = (self.shape(*a)[0], self.shape(*a)[1]);
                self.accumulate(grads, *a, |d| {
                    for i in 0..m {
                        for j in 0..n {
                            d[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::Reshape(a) => self.accumulate(grads, *a, |d| add_into(d, g)),
            Op::Conv2d { x, w } => {
                let (n, c, h, wd) = nchw("conv2d", self.shape(*x)).expect("checked in forward");
                let o = self.shape(*w)[0];
                let hw = h * wd;
                let (xs, ws) = (self.value(*x).data(), self.value(*w).data());
                let mut cols = vec![0.0; c * 9 * hw];
                if self.nodes[w.0].requires_grad {
                    self.accumulate(grads, *w, |dw| {
                        for s in 0..n {
                            im2col3(&xs[s * c * hw..(s + 1) * c * hw], c, h, wd, &mut cols);
                            gemm(o, hw, c * 9, &g[s * o * hw..(s + 1) * o * hw], false, &cols, true, dw, true);
                        }
                    });
                }
                self.accumulate(grads, *x, |dx| {
                    for s in 0..n {
                        gemm(c * 9, o, hw, ws, true, &g[s * o * hw..(s + 1) * o * hw], false, &mut cols, false);
                        col2im3(&cols, c, h, wd, &mut dx[s * c * hw..(s + 1) * c * hw]);
                    }
                });
            }
            Op::MaxPool2 { x, argmax } => {
                self.accumulate(grads, *x, |d| {
                    for (gi, &src) in g.iter().zip(argmax) {
                        d[src] += gi;
                    }
                });
            }
            Op::Upsample2(x) => {
                let (n, c, h, w) = nchw("upsample2x", self.shape(*x)).expect("checked in forward");
                let (oh, ow) = (2 * h, 2 * w);
                self.accumulate(grads, *x, |d| {
                    for plane in 0..n * c {
                        for y in 0..oh {
                            for xx in 0..ow {
                                d[plane * h * w + (y / 2) * w + xx / 2] += g[plane * oh * ow + y * ow + xx];
                            }
                        }
                    }
                });
            }
            Op::Relu(a) => {
                let va = self.value(*a).data();
                self.accumulate(grads, *a, |d| {
                    for i in 0..d.len() {
                        if va[i] > 0.0 {
                            d[i] += g[i];
                        }
                    }
                });
            }
            Op::Softmax { x, axis } => {
                // dx = y ⊙ (dy − Σ dy⊙y), without forming the Jacobian
                let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                self.accumulate(grads, *x, |d| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |j: usize| (o * len + j) * inner + i;
                            let dot: f64 = (0..len).map(|j| g[idx(j)] * out[idx(j)]).sum();
                            for j in 0..len {
                                d[idx(j)] += out[idx(j)] * (g[idx(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::Log(a) => {
                let va = self.value(*a).data();
                self.accumulate(grads, *a, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] / va[i];
                    }
                });
            }
            Op::Exp(a) => {
                self.accumulate(grads, *a, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * out[i];
                    }
                });
            }
            Op::Clamp { x, lo, hi } => {
                let vx = self.value(*x).data();
                self.accumulate(grads, *x, |d| {
                    for i in 0..d.len() {
                        if vx[i] >= *lo && vx[i] <= *hi {
                            d[i] += g[i];
                        }
                    }
                });
            }
            Op::Sum(a) => self.accumulate(grads, *a, |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(a) => {
                let scale = g[0] / self.value(*a).numel() as f64;
                self.accumulate(grads, *a, |d| d.iter_mut().for_each(|d| *d += scale));
            }
            Op::MeanAxis { x, axis } => {
                let (outer, len, inner) = split_axis(self.shape(*x), *axis);
                self.accumulate(grads, *x, |d| {
                    for o in 0..outer {
                        for j in 0..len {
                            for i in 0..inner {
                                d[(o * len + j) * inner + i] += g[o * inner + i] / len as f64;
                            }
                        }
                    }
                });
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for p in parts {
                    let len = self.shape(*p)[*axis];
                    self.accumulate(grads, *p, |d| {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..][..len * inner];
                            add_into(&mut d[o * len * inner..(o + 1) * len * inner], src);
                        }
                    });
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, full, inner) = split_axis(self.shape(*x), *axis);
                let len = node.value.shape()[*axis];
                self.accumulate(grads, *x, |d| {
                    for o in 0..outer {
                        let from = (o * full + start) * inner;
                        add_into(&mut d[from..from + len * inner], &g[o * len * inner..(o + 1) * len * inner]);
                    }
                });
            }
            Op::AddBias { x, b, axis } => {
                self.accumulate(grads, *x, |d| add_into(d, g));
                let (outer, mid, inner) = bias_extents(node.value.shape(), *axis, self.shape(*b).len());
                self.accumulate(grads, *b, |d| {
                    for o in 0..outer {
                        for m in 0..mid {
                            let base = (o * mid + m) * inner;
                            d[m] += g[base..base + inner].iter().sum::<f64>();
                        }
                    }
                });
            }
            Op::MaskMul { x, mask } => {
                self.accumulate(grads, *x, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * mask[i % mask.len()];
                    }
                });
            }
        }
    }
}

fn bias_extents(shape: &[usize], axis: usize, ndim: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let mid = shape[axis..axis + ndim].iter().product();
    let inner = shape[axis + ndim..].iter().product();
    (outer, mid, inner)
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}
