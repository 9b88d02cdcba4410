use super::gemm::{gemm, Layout};
use super::AutodiffError;
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    batch: usize,
    in_channels: usize,
    height: usize,
    width: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeometry {
    fn patch(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul { a: usize, b: usize, transpose_b: bool },
    Conv2d { x: usize, w: usize, geom: ConvGeometry, cols: Vec<f64> },
    AddBias { x: usize, bias: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Tanh(usize),
    Abs(usize),
    Sum(usize),
    Mean(usize),
    AvgPool2d { x: usize, size: usize },
    SoftmaxCrossEntropy { logits: usize, labels: Vec<usize>, probs: Vec<f64> },
    ConcatCols { a: usize, b: usize },
    Reshape(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records tensor operations in execution order for one reverse sweep.
///
/// Every node's inputs are recorded before it, so the node list is already a
/// topological order and [`Tape::backward`] is a single reverse scan.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to the tape's leaves.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient at `v`, or zeros shaped like `v` when `v` did not influence the root.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    /// Moves the gradient at `v` out, leaving zeros behind.
    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0].take().unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// `a · b` for `a: [m, k]`, `b: [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` for `a: [m, k]`, `b: [n, k]` (dense layer with `[out, in]` weights).
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var, AutodiffError> {
        let name = if transpose_b { "matmul_t" } else { "matmul" };
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 {
            return Err(mismatch(name, sa, sb));
        }
        let (m, k) = (sa[0], sa[1]);
        let (kb, n) = if transpose_b { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != kb {
            return Err(mismatch(name, sa, sb));
        }
        let lb = if transpose_b { Layout::transposed(k) } else { Layout::rows(n) };
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            1.0,
            self.value(a).data(),
            Layout::rows(k),
            self.value(b).data(),
            lb,
            0.0,
            &mut out,
            Layout::rows(n),
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_vec(&[m, n], out), Op::MatMul { a: a.0, b: b.0, transpose_b }, rg))
    }

    /// 2-D cross-correlation of `x: [N, C, H, W]` with `w: [O, C, K, K]`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var, AutodiffError> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] || sw[2] != sw[3] || stride == 0 {
            return Err(mismatch("conv2d", sx, sw));
        }
        let kernel = sw[2];
        if sx[2] + 2 * padding < kernel || sx[3] + 2 * padding < kernel {
            return Err(mismatch("conv2d", sx, sw));
        }
        let geom = ConvGeometry {
            batch: sx[0],
            in_channels: sx[1],
            height: sx[2],
            width: sx[3],
            out_channels: sw[0],
            kernel,
            stride,
            padding,
            out_h: (sx[2] + 2 * padding - kernel) / stride + 1,
            out_w: (sx[3] + 2 * padding - kernel) / stride + 1,
        };
        let cols = im2col(self.value(x).data(), &geom);
        let (o, kk, p) = (geom.out_channels, geom.patch(), geom.positions());
        let mut out = vec![0.0; geom.batch * o * p];
        let wdata = self.value(w).data();
        for n in 0..geom.batch {
            gemm(
                o,
                kk,
                p,
                1.0,
                wdata,
                Layout::rows(kk),
                &cols[n * kk * p..(n + 1) * kk * p],
                Layout::rows(p),
                0.0,
                &mut out[n * o * p..(n + 1) * o * p],
                Layout::rows(p),
            );
        }
        let value = Tensor::from_vec(&[geom.batch, o, geom.out_h, geom.out_w], out);
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(value, Op::Conv2d { x: x.0, w: w.0, geom, cols }, rg))
    }

    /// Adds `bias: [C]` along axis 1 of `x: [N, C, ...]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sx.len() < 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(mismatch("add_bias", sx, sb));
        }
        let channels = sx[1];
        let inner: usize = sx[2..].iter().product();
        let mut value = self.value(x).clone();
        let b = self.value(bias).data();
        for (chunk_idx, chunk) in value.data_mut().chunks_mut(inner).enumerate() {
            let c = b[chunk_idx % channels];
            chunk.iter_mut().for_each(|v| *v += c);
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(value, Op::AddBias { x: x.0, bias: bias.0 }, rg))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(mismatch(name, va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_vec(va.shape(), data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a.0, factor), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let rg = self.rg(a);
        self.push(value, Op::Relu(a.0), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(value, Op::Tanh(a.0), rg)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        let rg = self.rg(a);
        self.push(value, Op::Abs(a.0), rg)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a.0), rg)
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let value = Tensor::scalar(v.sum() / v.len().max(1) as f64);
        let rg = self.rg(a);
        self.push(value, Op::Mean(a.0), rg)
    }

    /// Non-overlapping `size × size` average pooling of `x: [N, C, H, W]`.
    pub fn avg_pool2d(&mut self, x: Var, size: usize) -> Result<Var, AutodiffError> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 4 || size == 0 || sx[2] < size || sx[3] < size {
            return Err(mismatch("avg_pool2d", &sx, &[size, size]));
        }
        let (n, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let (oh, ow) = (h / size, w / size);
        let norm = 1.0 / (size * size) as f64;
        let src = self.value(x).data();
        let mut out = vec![0.0; n * c * oh * ow];
        for plane in 0..n * c {
            let inp = &src[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for di in 0..size {
                        let row = &inp[(i * size + di) * w + j * size..];
                        acc += row[..size].iter().sum::<f64>();
                    }
                    dst[i * ow + j] = acc * norm;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_vec(&[n, c, oh, ow], out), Op::AvgPool2d { x: x.0, size }, rg))
    }

    /// Mean softmax cross-entropy of `logits: [N, C]` against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, AutodiffError> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != labels.len() || s[0] == 0 {
            return Err(mismatch("softmax_cross_entropy", s, &[labels.len()]));
        }
        let (n, c) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(AutodiffError::LabelOutOfRange { label: bad, classes: c });
        }
        let z = self.value(logits).data();
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for i in 0..n {
            let row = &z[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|&v| (v - max).exp()).sum();
            let log_denom = denom.ln();
            for j in 0..c {
                probs[i * c + j] = (row[j] - max).exp() / denom;
            }
            loss += log_denom - (row[labels[i]] - max);
        }
        let rg = self.rg(logits);
        let op = Op::SoftmaxCrossEntropy { logits: logits.0, labels: labels.to_vec(), probs };
        Ok(self.push(Tensor::scalar(loss / n as f64), op, rg))
    }

    /// Concatenates `a: [N, p]` and `b: [N, q]` into `[N, p + q]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(mismatch("concat_cols", sa, sb));
        }
        let (n, p, q) = (sa[0], sa[1], sb[1]);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * (p + q));
        for i in 0..n {
            out.extend_from_slice(&da[i * p..(i + 1) * p]);
            out.extend_from_slice(&db[i * q..(i + 1) * q]);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_vec(&[n, p + q], out), Op::ConcatCols { a: a.0, b: b.0 }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let value = self.value(a).clone();
        let from = value.shape().to_vec();
        let value = value.reshaped(shape).ok_or_else(|| mismatch("reshape", &from, shape))?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a.0), rg))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients, AutodiffError> {
        let rv = self.value(root);
        if !rv.is_scalar() {
            return Err(AutodiffError::NonScalarRoot { shape: rv.shape().to_vec() });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(rv.shape(), 1.0));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                Op::Constant => continue,
                _ => match grads[idx].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.propagate(idx, &g, &mut grads);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        for (idx, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[idx] = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], idx: usize, g: Tensor) {
        if !self.nodes[idx].requires_grad {
            return;
        }
        match &mut grads[idx] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let val = |i: usize| &self.nodes[i].value;
        let needs = |i: usize| self.nodes[i].requires_grad;
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul { a, b, transpose_b } => {
                let (a, b) = (*a, *b);
                let (va, vb) = (val(a), val(b));
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = node.value.shape()[1];
                if needs(a) {
                    let mut da = vec![0.0; m * k];
                    // dA = dC · Bᵀ (or dC · B when B is stored transposed)
                    let lb = if *transpose_b { Layout::rows(k) } else { Layout::transposed(n) };
                    gemm(m, n, k, 1.0, g.data(), Layout::rows(n), vb.data(), lb, 0.0, &mut da, Layout::rows(k));
                    self.accumulate(grads, a, Tensor::from_vec(&[m, k], da));
                }
                if needs(b) {
                    let mut db = vec![0.0; k * n];
                    if *transpose_b {
                        // dB[n,k] = dCᵀ · A
                        gemm(n, m, k, 1.0, g.data(), Layout::transposed(n), va.data(), Layout::rows(k), 0.0, &mut db, Layout::rows(k));
                        self.accumulate(grads, b, Tensor::from_vec(&[n, k], db));
                    } else {
                        // dB[k,n] = Aᵀ · dC
                        gemm(k, m, n, 1.0, va.data(), Layout::transposed(k), g.data(), Layout::rows(n), 0.0, &mut db, Layout::rows(n));
                        self.accumulate(grads, b, Tensor::from_vec(&[k, n], db));
                    }
                }
            }
            Op::Conv2d { x, w, geom, cols } => {
                let (x, w) = (*x, *w);
                let (o, kk, p) = (geom.out_channels, geom.patch(), geom.positions());
                let gd = g.data();
                if needs(w) {
                    let mut dw = vec![0.0; o * kk];
                    for n in 0..geom.batch {
                        gemm(
                            o,
                            p,
                            kk,
                            1.0,
                            &gd[n * o * p..(n + 1) * o * p],
                            Layout::rows(p),
                            &cols[n * kk * p..(n + 1) * kk * p],
                            Layout::transposed(p),
                            1.0,
                            &mut dw,
                            Layout::rows(kk),
                        );
                    }
                    self.accumulate(grads, w, Tensor::from_vec(val(w).shape(), dw));
                }
                if needs(x) {
                    let wd = val(w).data();
                    let mut dcols = vec![0.0; kk * p];
                    let mut dx = vec![0.0; val(x).len()];
                    let plane = geom.in_channels * geom.height * geom.width;
                    for n in 0..geom.batch {
                        gemm(
                            kk,
                            o,
                            p,
                            1.0,
                            wd,
                            Layout::transposed(kk),
                            &gd[n * o * p..(n + 1) * o * p],
                            Layout::rows(p),
                            0.0,
                            &mut dcols,
                            Layout::rows(p),
                        );
                        col2im(&dcols, geom, &mut dx[n * plane..(n + 1) * plane]);
                    }
                    self.accumulate(grads, x, Tensor::from_vec(val(x).shape(), dx));
                }
            }
            Op::AddBias { x, bias } => {
                let (x, bias) = (*x, *bias);
                if needs(bias) {
                    let s = node.value.shape();
                    let channels = s[1];
                    let inner: usize = s[2..].iter().product();
                    let mut db = vec![0.0; channels];
                    for (chunk_idx, chunk) in g.data().chunks(inner).enumerate() {
                        db[chunk_idx % channels] += chunk.iter().sum::<f64>();
                    }
                    self.accumulate(grads, bias, Tensor::from_vec(&[channels], db));
                }
                if needs(x) {
                    self.accumulate(grads, x, g.clone());
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if needs(*b) {
                    self.accumulate(grads, *b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if needs(a) {
                    self.accumulate(grads, a, zip_map(g, val(b), |gv, bv| gv * bv));
                }
                if needs(b) {
                    self.accumulate(grads, b, zip_map(g, val(a), |gv, av| gv * av));
                }
            }
            Op::Scale(a, f) => {
                let f = *f;
                self.accumulate(grads, *a, g.map(|v| v * f));
            }
            Op::Relu(a) => {
                self.accumulate(grads, *a, zip_map(g, val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 }));
            }
            Op::Tanh(a) => {
                self.accumulate(grads, *a, zip_map(g, &node.value, |gv, y| gv * (1.0 - y * y)));
            }
            Op::Abs(a) => {
                self.accumulate(grads, *a, zip_map(g, val(*a), |gv, x| gv * sign(x)));
            }
            Op::Sum(a) => {
                let s = g.item();
                self.accumulate(grads, *a, Tensor::full(val(*a).shape(), s));
            }
            Op::Mean(a) => {
                let va = val(*a);
                let s = g.item() / va.len().max(1) as f64;
                self.accumulate(grads, *a, Tensor::full(va.shape(), s));
            }
            Op::AvgPool2d { x, size } => {
                let vx = val(*x);
                let s = vx.shape();
                let (h, w) = (s[2], s[3]);
                let (oh, ow) = (h / size, w / size);
                let norm = 1.0 / (size * size) as f64;
                let mut dx = vec![0.0; vx.len()];
                let gd = g.data();
                for plane in 0..s[0] * s[1] {
                    let src = &gd[plane * oh * ow..(plane + 1) * oh * ow];
                    let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
                    for i in 0..oh {
                        for j in 0..ow {
                            let v = src[i * ow + j] * norm;
                            for di in 0..*size {
                                let row = (i * size + di) * w + j * size;
                                dst[row..row + size].iter_mut().for_each(|d| *d += v);
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::from_vec(s, dx));
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let s = val(*logits).shape();
                let (n, c) = (s[0], s[1]);
                let scale = g.item() / n as f64;
                let mut d = probs.clone();
                for (i, &label) in labels.iter().enumerate() {
                    d[i * c + label] -= 1.0;
                }
                d.iter_mut().for_each(|v| *v *= scale);
                self.accumulate(grads, *logits, Tensor::from_vec(&[n, c], d));
            }
            Op::ConcatCols { a, b } => {
                let (a, b) = (*a, *b);
                let (p, q) = (val(a).shape()[1], val(b).shape()[1]);
                let n = val(a).shape()[0];
                let gd = g.data();
                if needs(a) {
                    let mut da = Vec::with_capacity(n * p);
                    for i in 0..n {
                        da.extend_from_slice(&gd[i * (p + q)..i * (p + q) + p]);
                    }
                    self.accumulate(grads, a, Tensor::from_vec(&[n, p], da));
                }
                if needs(b) {
                    let mut db = Vec::with_capacity(n * q);
                    for i in 0..n {
                        db.extend_from_slice(&gd[i * (p + q) + p..(i + 1) * (p + q)]);
                    }
                    self.accumulate(grads, b, Tensor::from_vec(&[n, q], db));
                }
            }
            Op::Reshape(a) => {
                let shaped = Tensor::from_vec(val(*a).shape(), g.data().to_vec());
                self.accumulate(grads, *a, shaped);
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data)
}

/// Unfolds each sample into `[C·K·K, Ho·Wo]` patch columns, batch-major.
fn im2col(x: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let (kk, p) = (g.patch(), g.positions());
    let plane = g.in_channels * g.height * g.width;
    let mut cols = vec![0.0; g.batch * kk * p];
    for n in 0..g.batch {
        let src = &x[n * plane..(n + 1) * plane];
        let dst = &mut cols[n * kk * p..(n + 1) * kk * p];
        for c in 0..g.in_channels {
            for ki in 0..g.kernel {
                for kj in 0..g.kernel {
                    let row = (c * g.kernel + ki) * g.kernel + kj;
                    let out_row = &mut dst[row * p..(row + 1) * p];
                    for oi in 0..g.out_h {
                        let ii = (oi * g.stride + ki) as isize - g.padding as isize;
                        if ii < 0 || ii >= g.height as isize {
                            continue;
                        }
                        let src_row = &src[(c * g.height + ii as usize) * g.width..];
                        for oj in 0..g.out_w {
                            let jj = (oj * g.stride + kj) as isize - g.padding as isize;
                            if jj >= 0 && jj < g.width as isize {
                                out_row[oi * g.out_w + oj] = src_row[jj as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-adds patch-column gradients of one sample back to its image plane.
fn col2im(dcols: &[f64], g: &ConvGeometry, dx: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.in_channels {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let src = &dcols[row * p..(row + 1) * p];
                for oi in 0..g.out_h {
                    let ii = (oi * g.stride + ki) as isize - g.padding as isize;
                    if ii < 0 || ii >= g.height as isize {
                        continue;
                    }
                    let base = (c * g.height + ii as usize) * g.width;
                    for oj in 0..g.out_w {
                        let jj = (oj * g.stride + kj) as isize - g.padding as isize;
                        if jj >= 0 && jj < g.width as isize {
                            dx[base + jj as usize] += src[oi * g.out_w + oj];
                        }
                    }
                }
            }
        }
    }
}
