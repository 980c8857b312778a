//! Tape-style computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and backward is a single reverse sweep.

use crate::autograd::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const BATCHNORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Whether batch normalisation uses batch statistics or running averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch statistics observed by a training-mode batchnorm node.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub slot: usize,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }
    fn out_hw(&self) -> usize {
        self.oh * self.ow
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMulNT,
    AddBias,
    Conv2d { geom: ConvGeom, cols: Vec<T> },
    Relu,
    MaxPool2 { argmax: Vec<usize> },
    GlobalAvgPool,
    BatchNorm { xhat: Vec<T>, inv_std: Vec<T>, train: bool },
    Reshape,
    Softmax,
    CrossEntropy { probs: Vec<T>, targets: Vec<usize> },
    L2Normalize { norms: Vec<T> },
    Add,
    Mul,
    Scale(T),
    Sum,
    Mean,
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    inputs: Vec<NodeId>,
    op: Op<T>,
    needs_grad: bool,
    param: Option<usize>,
}

/// Single-owner recording of one forward pass.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    batch_stats: Vec<BatchStats<T>>,
}

/// Per-node gradients produced by a backward sweep.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }
}

fn shape_err(msg: String) -> Error {
    Error::Config(msg)
}

fn sum_f64<T: Scalar>(it: impl Iterator<Item = T>) -> f64 {
    it.map(|v| v.as_f64()).sum()
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            batch_stats: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn batch_stats(&self) -> &[BatchStats<T>] {
        &self.batch_stats
    }

    fn push(&mut self, value: Tensor<T>, inputs: Vec<NodeId>, op: Op<T>) -> NodeId {
        debug_assert!(inputs.iter().all(|i| i.0 < self.nodes.len()));
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value: value.with_requires_grad(false),
            inputs,
            op,
            needs_grad,
            param: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A constant leaf.
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(value, false)
    }

    /// A leaf whose gradient is tracked but which is not bound to a parameter.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value: value.with_requires_grad(false),
            inputs: Vec::new(),
            op: Op::Leaf,
            needs_grad: requires_grad,
            param: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Binds parameter `index` of the caller's parameter list as a leaf.
    pub fn param(&mut self, tensor: &Tensor<T>, index: usize) -> NodeId {
        let id = self.leaf(tensor.clone(), tensor.requires_grad());
        self.nodes[id.0].param = Some(index);
        id
    }

    /// `a · bᵀ` for `a: [m, k]`, `b: [n, k]`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(shape_err(format!("matmul_nt: {sa:?} x {sb:?}ᵀ")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            false,
            true,
            m,
            n,
            k,
            T::one(),
            self.value(a).data(),
            self.value(b).data(),
            T::zero(),
            &mut out,
        );
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, vec![a, b], Op::MatMulNT))
    }

    /// Adds `bias[c]` along dimension 1 of `x`.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let sx = self.shape(x);
        let sb = self.shape(bias);
        if sx.len() < 2 || sb.len() != 1 || sb[0] != sx[1] {
            return Err(shape_err(format!("add_bias: {sx:?} + {sb:?}")));
        }
        let c = sx[1];
        let inner: usize = sx[2..].iter().product();
        let b = self.value(bias).data().to_vec();
        let mut v = self.value(x).clone();
        for (i, chunk) in v.data_mut().chunks_mut(inner).enumerate() {
            let bc = b[i % c];
            chunk.iter_mut().for_each(|e| *e += bc);
        }
        Ok(self.push(v, vec![x, bias], Op::AddBias))
    }

    /// Zero-padded 2-D cross-correlation, `input: [n,c,h,w]`, `kernel: [f,c,kh,kw]`.
    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let si = self.shape(input);
        let sk = self.shape(kernel);
        if si.len() != 4 || sk.len() != 4 {
            return Err(shape_err(format!("conv2d: input {si:?}, kernel {sk:?}")));
        }
        if si[1] != sk[1] {
            return Err(shape_err(format!(
                "conv2d: kernel expects {} channels, input has {}",
                sk[1], si[1]
            )));
        }
        if stride == 0 {
            return Err(shape_err("conv2d: stride must be positive".into()));
        }
        let (n, c, h, w) = (si[0], si[1], si[2], si[3]);
        let (f, kh, kw) = (sk[0], sk[2], sk[3]);
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(shape_err(format!(
                "conv2d: kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        let geom = ConvGeom {
            n,
            c,
            h,
            w,
            f,
            kh,
            kw,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
            stride,
            pad,
        };
        let (patch, ohw) = (geom.patch(), geom.out_hw());
        let x = self.value(input).data();
        let k = self.value(kernel).data();
        // One wide product for the whole batch: cols is [patch, n * ohw].
        let cols = im2col_batch(&geom, x);
        let mut wide = vec![T::zero(); f * n * ohw];
        T::gemm(
            false,
            false,
            f,
            n * ohw,
            patch,
            T::one(),
            k,
            &cols,
            T::zero(),
            &mut wide,
        );
        let mut out = vec![T::zero(); n * f * ohw];
        for fi in 0..f {
            for b in 0..n {
                out[(b * f + fi) * ohw..(b * f + fi + 1) * ohw]
                    .copy_from_slice(&wide[(fi * n + b) * ohw..(fi * n + b + 1) * ohw]);
            }
        }
        let value = Tensor::new(vec![n, f, geom.oh, geom.ow], out)?;
        Ok(self.push(value, vec![input, kernel], Op::Conv2d { geom, cols }))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let mut v = self.value(x).clone();
        v.data_mut().iter_mut().for_each(|e| *e = e.max(T::zero()));
        self.push(v, vec![x], Op::Relu)
    }

    /// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn maxpool2(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s[2] < 2 || s[3] < 2 {
            return Err(shape_err(format!("maxpool2: input {s:?}")));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h / 2, w / 2);
        let data = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                    out.push(data[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        Ok(self.push(value, vec![x], Op::MaxPool2 { argmax }))
    }

    /// Mean over the spatial dimensions: `[n,c,h,w] -> [n,c]`.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(shape_err(format!("global_avg_pool: input {s:?}")));
        }
        let hw = s[2] * s[3];
        let out: Vec<T> = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|p| T::from_f64_lossy(sum_f64(p.iter().copied()) / hw as f64))
            .collect();
        let value = Tensor::new(vec![s[0], s[1]], out)?;
        Ok(self.push(value, vec![x], Op::GlobalAvgPool))
    }

    /// Per-channel batch normalisation over dimension 1.
    ///
    /// In [`Mode::Train`] batch statistics are used and recorded under `slot`;
    /// in [`Mode::Eval`] the supplied running statistics are used.
    pub fn batchnorm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        slot: usize,
        mode: Mode,
        running: (&[T], &[T]),
    ) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 && s.len() != 4 {
            return Err(shape_err(format!("batchnorm: input {s:?}")));
        }
        let c = s[1];
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err(format!("batchnorm: affine params for {c} channels")));
        }
        if running.0.len() != c || running.1.len() != c {
            return Err(shape_err("batchnorm: running statistics length".into()));
        }
        let n = s[0];
        let inner: usize = s[2..].iter().product();
        let m = (n * inner) as f64;
        let xd = self.value(x).data();
        let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0f64; c];
                let mut sq = vec![0.0f64; c];
                for (i, chunk) in xd.chunks(inner).enumerate() {
                    let ch = i % c;
                    for &v in chunk {
                        let v = v.as_f64();
                        mean[ch] += v;
                        sq[ch] += v * v;
                    }
                }
                let mean: Vec<f64> = mean.iter().map(|s| s / m).collect();
                let var = sq.iter().zip(&mean).map(|(q, mu)| (q / m - mu * mu).max(0.0)).collect();
                (mean, var)
            }
            Mode::Eval => (
                running.0.iter().map(|v| v.as_f64()).collect(),
                running.1.iter().map(|v| v.as_f64()).collect(),
            ),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCHNORM_EPS).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = Vec::with_capacity(xd.len());
        let mut out = Vec::with_capacity(xd.len());
        for (i, chunk) in xd.chunks(inner).enumerate() {
            let ch = i % c;
            for &v in chunk {
                let xh = T::from_f64_lossy((v.as_f64() - mean[ch]) * inv_std[ch]);
                xhat.push(xh);
                out.push(g[ch] * xh + b[ch]);
            }
        }
        if mode == Mode::Train {
            self.batch_stats.push(BatchStats {
                slot,
                mean: mean.iter().map(|&v| T::from_f64_lossy(v)).collect(),
                var: var.iter().map(|&v| T::from_f64_lossy(v)).collect(),
            });
        }
        let inv_std = inv_std.into_iter().map(T::from_f64_lossy).collect();
        let value = Tensor::new(s, out)?;
        let train = mode == Mode::Train;
        Ok(self.push(value, vec![x, gamma, beta], Op::BatchNorm { xhat, inv_std, train }))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let v = self.value(x).clone().reshape(shape)?;
        Ok(self.push(v, vec![x], Op::Reshape))
    }

    /// `[n, ...] -> [n, prod(...)]`.
    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x);
        let n = s[0];
        let rest = s[1..].iter().product();
        self.reshape(x, vec![n, rest])
    }

    /// Row-wise softmax of a rank-2 tensor.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(shape_err(format!("softmax: input {s:?}")));
        }
        let mut out = Vec::with_capacity(s[0] * s[1]);
        for row in self.value(x).data().chunks(s[1]) {
            out.extend(softmax_row(row, None).into_iter().map(T::from_f64_lossy));
        }
        let value = Tensor::new(s, out)?;
        Ok(self.push(value, vec![x], Op::Softmax))
    }

    /// Mean softmax cross-entropy of `logits: [n, c]` against class indices.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        self.cross_entropy_impl(logits, targets, false)
    }

    /// Cross-entropy where entry `(i, i)` of the square logit matrix is
    /// removed from row `i`'s softmax.
    pub fn cross_entropy_offdiag(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        self.cross_entropy_impl(logits, targets, true)
    }

    fn cross_entropy_impl(&mut self, logits: NodeId, targets: &[usize], exclude_diag: bool) -> Result<NodeId> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 {
            return Err(shape_err(format!("cross_entropy: logits {s:?}")));
        }
        let (n, c) = (s[0], s[1]);
        if targets.len() != n {
            return Err(Error::Input(format!(
                "cross_entropy: {} targets for {n} rows",
                targets.len()
            )));
        }
        if exclude_diag && n != c {
            return Err(shape_err(format!("cross_entropy_offdiag: logits {s:?} not square")));
        }
        let mut probs = Vec::with_capacity(n * c);
        let mut total = 0.0f64;
        for (i, (row, &t)) in self.value(logits).data().chunks(c).zip(targets).enumerate() {
            if t >= c || (exclude_diag && t == i) {
                return Err(Error::Input(format!("cross_entropy: target {t} invalid for row {i}")));
            }
            let skip = exclude_diag.then_some(i);
            let (p, max, ln_z) = softmax_row_lse(row, skip);
            total += (max - row[t].as_f64()) + ln_z;
            probs.extend(p.into_iter().map(T::from_f64_lossy));
        }
        let value = Tensor::scalar(T::from_f64_lossy(total / n as f64));
        Ok(self.push(
            value,
            vec![logits],
            Op::CrossEntropy {
                probs,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Scales each row of a rank-2 tensor to unit L2 norm.
    pub fn l2_normalize(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(shape_err(format!("l2_normalize: input {s:?}")));
        }
        let mut out = Vec::with_capacity(s[0] * s[1]);
        let mut norms = Vec::with_capacity(s[0]);
        for row in self.value(x).data().chunks(s[1]) {
            let norm = sum_f64(row.iter().map(|&v| v * v)).sqrt().max(1e-12);
            norms.push(T::from_f64_lossy(norm));
            out.extend(row.iter().map(|&v| T::from_f64_lossy(v.as_f64() / norm)));
        }
        let value = Tensor::new(s, out)?;
        Ok(self.push(value, vec![x], Op::L2Normalize { norms }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Op::Add, |x, y| x + y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Op::Mul, |x, y| x * y)
    }

    fn binary(&mut self, a: NodeId, b: NodeId, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!(
                "elementwise op on {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut v = self.value(a).clone();
        v.data_mut()
            .iter_mut()
            .zip(self.value(b).data())
            .for_each(|(x, &y)| *x = f(*x, y));
        Ok(self.push(v, vec![a, b], op))
    }

    pub fn scale(&mut self, x: NodeId, factor: T) -> NodeId {
        let mut v = self.value(x).clone();
        v.data_mut().iter_mut().for_each(|e| *e *= factor);
        self.push(v, vec![x], Op::Scale(factor))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total = sum_f64(self.value(x).data().iter().copied());
        self.push(Tensor::scalar(T::from_f64_lossy(total)), vec![x], Op::Sum)
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let total = sum_f64(v.data().iter().copied()) / v.len() as f64;
        self.push(Tensor::scalar(T::from_f64_lossy(total)), vec![x], Op::Mean)
    }

    /// Reverse sweep from a scalar node.
    pub fn gradients(&self, loss: NodeId) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || node.inputs.is_empty() {
                continue;
            }
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            let input_grads = self.local_backward(node, &gout);
            grads[idx] = Some(gout);
            for (inp, g) in node.inputs.iter().zip(input_grads) {
                let (Some(g), true) = (g, self.nodes[inp.0].needs_grad) else {
                    continue;
                };
                match &mut grads[inp.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Backpropagates `loss` and accumulates into the bound parameters.
    ///
    /// Every parameter with `requires_grad` ends with a gradient buffer; those
    /// the loss does not reach get zeros.
    pub fn backward(&self, loss: NodeId, params: &mut [Tensor<T>]) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (idx, node) in self.nodes.iter().enumerate() {
            let Some(p) = node.param else { continue };
            let Some(g) = grads.grads[idx].as_deref() else {
                continue;
            };
            let target = params
                .get_mut(p)
                .ok_or_else(|| Error::Usage(format!("parameter index {p} out of range")))?;
            if target.len() != g.len() {
                return Err(Error::Usage(format!("parameter {p} changed size during the pass")));
            }
            if target.requires_grad() {
                target.accumulate_grad(g);
            }
        }
        for p in params.iter_mut().filter(|p| p.requires_grad()) {
            p.ensure_grad();
        }
        Ok(())
    }

    fn local_backward(&self, node: &Node<T>, gout: &[T]) -> Vec<Option<Vec<T>>> {
        let val = |i: usize| self.nodes[node.inputs[i].0].value.data();
        let shape = |i: usize| self.nodes[node.inputs[i].0].value.shape();
        let wants = |i: usize| self.nodes[node.inputs[i].0].needs_grad;
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMulNT => {
                let (m, k) = (shape(0)[0], shape(0)[1]);
                let n = shape(1)[0];
                let da = wants(0).then(|| {
                    let mut da = vec![T::zero(); m * k];
                    T::gemm(false, false, m, k, n, T::one(), gout, val(1), T::zero(), &mut da);
                    da
                });
                let db = wants(1).then(|| {
                    let mut db = vec![T::zero(); n * k];
                    T::gemm(true, false, n, k, m, T::one(), gout, val(0), T::zero(), &mut db);
                    db
                });
                vec![da, db]
            }
            Op::AddBias => {
                let s = shape(0);
                let c = s[1];
                let inner: usize = s[2..].iter().product();
                let db = wants(1).then(|| {
                    let mut acc = vec![0.0f64; c];
                    for (i, chunk) in gout.chunks(inner).enumerate() {
                        acc[i % c] += sum_f64(chunk.iter().copied());
                    }
                    acc.into_iter().map(T::from_f64_lossy).collect()
                });
                vec![wants(0).then(|| gout.to_vec()), db]
            }
            Op::Conv2d { geom, cols } => {
                let g = *geom;
                let (patch, ohw) = (g.patch(), g.out_hw());
                let in_plane = g.c * g.h * g.w;
                let nohw = g.n * ohw;
                let mut wide = vec![T::zero(); g.f * nohw];
                for fi in 0..g.f {
                    for b in 0..g.n {
                        wide[(fi * g.n + b) * ohw..(fi * g.n + b + 1) * ohw]
                            .copy_from_slice(&gout[(b * g.f + fi) * ohw..(b * g.f + fi + 1) * ohw]);
                    }
                }
                let dk = wants(1).then(|| {
                    let mut dk = vec![T::zero(); g.f * patch];
                    T::gemm(false, true, g.f, patch, nohw, T::one(), &wide, cols, T::zero(), &mut dk);
                    dk
                });
                let dx = wants(0).then(|| {
                    let mut dcol = vec![T::zero(); patch * nohw];
                    T::gemm(
                        true,
                        false,
                        patch,
                        nohw,
                        g.f,
                        T::one(),
                        val(1),
                        &wide,
                        T::zero(),
                        &mut dcol,
                    );
                    let mut dx = vec![T::zero(); g.n * in_plane];
                    col2im_batch(&g, &dcol, &mut dx);
                    dx
                });
                vec![dx, dk]
            }
            Op::Relu => {
                let x = val(0);
                vec![Some(
                    gout.iter()
                        .zip(x)
                        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                        .collect(),
                )]
            }
            Op::MaxPool2 { argmax } => {
                let mut dx = vec![T::zero(); val(0).len()];
                for (&g, &i) in gout.iter().zip(argmax) {
                    dx[i] += g;
                }
                vec![Some(dx)]
            }
            Op::GlobalAvgPool => {
                let s = shape(0);
                let hw = s[2] * s[3];
                let inv = T::from_f64_lossy(1.0 / hw as f64);
                let mut dx = Vec::with_capacity(val(0).len());
                for &g in gout {
                    dx.extend(std::iter::repeat_n(g * inv, hw));
                }
                vec![Some(dx)]
            }
            Op::BatchNorm { xhat, inv_std, train } => {
                let s = shape(0);
                let c = s[1];
                let inner: usize = s[2..].iter().product();
                let m = (s[0] * inner) as f64;
                let gamma = val(1);
                let mut sum_dy = vec![0.0f64; c];
                let mut sum_dy_xhat = vec![0.0f64; c];
                for (i, (gc, xc)) in gout.chunks(inner).zip(xhat.chunks(inner)).enumerate() {
                    let ch = i % c;
                    for (&g, &xh) in gc.iter().zip(xc) {
                        sum_dy[ch] += g.as_f64();
                        sum_dy_xhat[ch] += (g * xh).as_f64();
                    }
                }
                // Eval mode is a per-channel affine map; train mode also
                // differentiates through the batch mean and variance.
                let train = *train;
                let dx = wants(0).then(|| {
                    let mut dx = Vec::with_capacity(gout.len());
                    for (i, (gc, xc)) in gout.chunks(inner).zip(xhat.chunks(inner)).enumerate() {
                        let ch = i % c;
                        let scale = gamma[ch].as_f64() * inv_std[ch].as_f64();
                        for (&g, &xh) in gc.iter().zip(xc) {
                            let v = if train {
                                scale * (g.as_f64() - sum_dy[ch] / m - xh.as_f64() * sum_dy_xhat[ch] / m)
                            } else {
                                scale * g.as_f64()
                            };
                            dx.push(T::from_f64_lossy(v));
                        }
                    }
                    dx
                });
                let dgamma = wants(1).then(|| sum_dy_xhat.iter().map(|&v| T::from_f64_lossy(v)).collect());
                let dbeta = wants(2).then(|| sum_dy.iter().map(|&v| T::from_f64_lossy(v)).collect());
                vec![dx, dgamma, dbeta]
            }
            Op::Reshape => vec![Some(gout.to_vec())],
            Op::Softmax => {
                let y = node.value.data();
                let c = node.value.shape()[1];
                let mut dx = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks(c).zip(gout.chunks(c)) {
                    let dot = sum_f64(yr.iter().zip(gr).map(|(&a, &b)| a * b));
                    dx.extend(
                        yr.iter()
                            .zip(gr)
                            .map(|(&y, &g)| T::from_f64_lossy(y.as_f64() * (g.as_f64() - dot))),
                    );
                }
                vec![Some(dx)]
            }
            Op::CrossEntropy { probs, targets } => {
                let c = shape(0)[1];
                let n = targets.len();
                let scale = gout[0].as_f64() / n as f64;
                let mut dx: Vec<T> = probs.clone();
                for (i, &t) in targets.iter().enumerate() {
                    dx[i * c + t] -= T::one();
                }
                dx.iter_mut().for_each(|v| *v = T::from_f64_lossy(v.as_f64() * scale));
                vec![Some(dx)]
            }
            Op::L2Normalize { norms } => {
                let y = node.value.data();
                let d = node.value.shape()[1];
                let mut dx = Vec::with_capacity(y.len());
                for ((yr, gr), &norm) in y.chunks(d).zip(gout.chunks(d)).zip(norms) {
                    let dot = sum_f64(yr.iter().zip(gr).map(|(&a, &b)| a * b));
                    let inv = 1.0 / norm.as_f64();
                    dx.extend(
                        yr.iter()
                            .zip(gr)
                            .map(|(&y, &g)| T::from_f64_lossy((g.as_f64() - y.as_f64() * dot) * inv)),
                    );
                }
                vec![Some(dx)]
            }
            Op::Add => vec![wants(0).then(|| gout.to_vec()), wants(1).then(|| gout.to_vec())],
            Op::Mul => vec![
                wants(0).then(|| gout.iter().zip(val(1)).map(|(&g, &b)| g * b).collect()),
                wants(1).then(|| gout.iter().zip(val(0)).map(|(&g, &a)| g * a).collect()),
            ],
            Op::Scale(f) => vec![Some(gout.iter().map(|&g| g * *f).collect())],
            Op::Sum => vec![Some(vec![gout[0]; val(0).len()])],
            Op::Mean => {
                let n = val(0).len();
                let g = T::from_f64_lossy(gout[0].as_f64() / n as f64);
                vec![Some(vec![g; n])]
            }
        }
    }
}

fn softmax_row<T: Scalar>(row: &[T], skip: Option<usize>) -> Vec<f64> {
    softmax_row_lse(row, skip).0
}

/// Probabilities (with `skip` forced to zero), the row max and `ln Σ exp(x - max)`.
fn softmax_row_lse<T: Scalar>(row: &[T], skip: Option<usize>) -> (Vec<f64>, f64, f64) {
    let max = row
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != skip)
        .map(|(_, v)| v.as_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row
        .iter()
        .enumerate()
        .map(|(j, v)| if Some(j) == skip { 0.0 } else { (v.as_f64() - max).exp() })
        .collect();
    let z: f64 = exps.iter().sum();
    (exps.iter().map(|e| e / z).collect(), max, z.ln())
}

/// Output columns `ox` whose input column `ox*stride + kj - pad` lies inside `[0, w)`.
fn valid_cols(g: &ConvGeom, kj: usize) -> std::ops::Range<usize> {
    let off = kj as isize - g.pad as isize;
    let s = g.stride as isize;
    let lo = if off >= 0 { 0 } else { ((-off + s - 1) / s) as usize };
    let hi_excl = (g.w as isize - off + s - 1) / s;
    let hi = (hi_excl.max(0) as usize).min(g.ow);
    lo.min(hi)..hi
}

/// `[n, c, h, w]` into `[c*kh*kw, n*oh*ow]` patch columns.
fn im2col_batch<T: Scalar>(g: &ConvGeom, x: &[T]) -> Vec<T> {
    let ohw = g.out_hw();
    let nohw = g.n * ohw;
    let mut col = vec![T::zero(); g.patch() * nohw];
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((c * g.kh + ki) * g.kw + kj) * nohw;
                let cols = valid_cols(g, kj);
                let ix0 = (cols.start * g.stride + kj) as isize - g.pad as isize;
                for b in 0..g.n {
                    let plane = &x[(b * g.c + c) * g.h * g.w..(b * g.c + c + 1) * g.h * g.w];
                    for oy in 0..g.oh {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize || cols.is_empty() {
                            continue;
                        }
                        let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                        let start = row + b * ohw + oy * g.ow;
                        let dst = &mut col[start + cols.start..start + cols.end];
                        if g.stride == 1 {
                            let from = ix0 as usize;
                            dst.copy_from_slice(&src[from..from + dst.len()]);
                        } else {
                            for (d, ix) in dst.iter_mut().zip((ix0 as usize..).step_by(g.stride)) {
                                *d = src[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im_batch<T: Scalar>(g: &ConvGeom, col: &[T], dx: &mut [T]) {
    let ohw = g.out_hw();
    let nohw = g.n * ohw;
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((c * g.kh + ki) * g.kw + kj) * nohw;
                let cols = valid_cols(g, kj);
                if cols.is_empty() {
                    continue;
                }
                let ix0 = ((cols.start * g.stride + kj) as isize - g.pad as isize) as usize;
                for b in 0..g.n {
                    let base_plane = (b * g.c + c) * g.h * g.w;
                    for oy in 0..g.oh {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let base = base_plane + iy as usize * g.w;
                        let start = row + b * ohw + oy * g.ow;
                        let src = &col[start + cols.start..start + cols.end];
                        let dst = &mut dx[base..base + g.w];
                        for (&v, ix) in src.iter().zip((ix0..).step_by(g.stride)) {
                            dst[ix] += v;
                        }
                    }
                }
            }
        }
    }
}
