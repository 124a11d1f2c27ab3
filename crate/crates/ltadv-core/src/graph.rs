//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape of operation records. Forward values are computed
//! eagerly as nodes are pushed, so the tape is always evaluated and
//! [`Graph::backward`] can run at any time. Graphs are rebuilt per mini-batch;
//! nothing is cached across batches.
//!
//! `backward` takes `&self` and accumulates adjoints into buffers it owns, so
//! a finished graph can be shared read-only across threads while independent
//! graphs differentiate in parallel.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// `[N,C] + [C]`, the bias broadcast of a dense layer.
    AddRow(NodeId, NodeId),
    /// `[N,C,H,W] + [C]`, the bias broadcast of a conv layer.
    AddChannelBias(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Relu(NodeId),
    /// Row-wise log-softmax of `[N,C]`, computed with max subtraction.
    LogSoftmax(NodeId),
    /// `-(1/N) Σ_i logp[i, y_i]` for per-row labels `y`.
    NllMean(NodeId, Vec<usize>),
    MeanAll(NodeId),
    SumAll(NodeId),
    Reshape(NodeId),
    /// Valid 3×3 convolution, stride 1: `x [N,Cin,H,W] * k [Cout,Cin,3,3]`.
    Conv3x3(NodeId, NodeId),
    /// 2×2 max pooling, stride 2, trailing row/column dropped on odd sizes.
    MaxPool2(NodeId),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Reverse-mode tape over [`Tensor`] values.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Adjoints of a scalar root with respect to every node, indexed by
/// [`NodeId`]. Leaves that do not influence the root keep zero gradients.
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    /// Gradient of the root with respect to `id`.
    pub fn wrt(&self, id: NodeId) -> &Tensor {
        &self.grads[id.0]
    }

    /// Move the gradient for `id` out.
    pub fn take(&mut self, id: NodeId) -> Tensor {
        core::mem::replace(&mut self.grads[id.0], Tensor::scalar(0.0))
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Insert a leaf holding `value`. Parameters, inputs, and constants are
    /// all leaves; `backward` reports gradients for every one of them.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let t = self.zip(a, b, "Graph::add", |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), t))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let t = self.zip(a, b, "Graph::sub", |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), t))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let t = self.zip(a, b, "Graph::mul", |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), t))
    }

    fn zip(
        &self,
        a: NodeId,
        b: NodeId,
        context: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape(
                context,
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(va.shape().to_vec(), data)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let va = self.value(a);
        let t = Tensor::new(va.shape().to_vec(), va.data().iter().map(|&x| c * x).collect())
            .expect("same shape");
        self.push(Op::Scale(a, c), t)
    }

    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(bias));
        if va.shape().len() != 2 || vb.shape() != [va.shape()[1]] {
            return Err(Error::shape(
                "Graph::add_row",
                format!("{:?} + {:?}", va.shape(), vb.shape()),
            ));
        }
        let cols = va.shape()[1];
        let mut data = va.data().to_vec();
        for row in data.chunks_mut(cols) {
            for (o, &b) in row.iter_mut().zip(vb.data()) {
                *o += b;
            }
        }
        let t = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(Op::AddRow(a, bias), t))
    }

    pub fn add_channel_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(bias));
        if va.shape().len() != 4 || vb.shape() != [va.shape()[1]] {
            return Err(Error::shape(
                "Graph::add_channel_bias",
                format!("{:?} + {:?}", va.shape(), vb.shape()),
            ));
        }
        let (n, c, h, w) = shape4(va.shape());
        let plane = h * w;
        let mut data = va.data().to_vec();
        for i in 0..n {
            for ch in 0..c {
                let b = vb.data()[ch];
                let base = (i * c + ch) * plane;
                for v in &mut data[base..base + plane] {
                    *v += b;
                }
            }
        }
        let t = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(Op::AddChannelBias(a, bias), t))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape().len() != 2 || vb.shape().len() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(Error::shape(
                "Graph::matmul",
                format!("{:?} x {:?}", va.shape(), vb.shape()),
            ));
        }
        let (n, k) = (va.shape()[0], va.shape()[1]);
        let m = vb.shape()[1];
        let mut out = vec![0.0; n * m];
        matmul_nn(va.data(), vb.data(), &mut out, n, k, m);
        let t = Tensor::new(vec![n, m], out)?;
        Ok(self.push(Op::MatMul(a, b), t))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let t = Tensor::new(
            va.shape().to_vec(),
            va.data().iter().map(|&x| math::max(x, 0.0)).collect(),
        )
        .expect("same shape");
        self.push(Op::Relu(a), t)
    }

    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        if va.shape().len() != 2 {
            return Err(Error::shape(
                "Graph::log_softmax",
                format!("expected [N,C], got {:?}", va.shape()),
            ));
        }
        let cols = va.shape()[1];
        let mut data = va.data().to_vec();
        for row in data.chunks_mut(cols) {
            let mx = row.iter().fold(f64::NEG_INFINITY, |m, &v| math::max(m, v));
            let mut lse = 0.0;
            for v in row.iter() {
                lse += math::exp(v - mx);
            }
            let lse = mx + math::ln(lse);
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let t = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(Op::LogSoftmax(a), t))
    }

    pub fn nll_mean(&mut self, logp: NodeId, labels: &[usize]) -> Result<NodeId> {
        let v = self.value(logp);
        if v.shape().len() != 2 || v.shape()[0] != labels.len() {
            return Err(Error::shape(
                "Graph::nll_mean",
                format!("logp {:?} vs {} labels", v.shape(), labels.len()),
            ));
        }
        let cols = v.shape()[1];
        if let Some(&bad) = labels.iter().find(|&&y| y >= cols) {
            return Err(Error::contract(
                "Graph::nll_mean",
                format!("label {bad} out of range for {cols} classes"),
            ));
        }
        let mut acc = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            acc -= v.data()[i * cols + y];
        }
        let t = Tensor::scalar(acc / labels.len() as f64);
        Ok(self.push(Op::NllMean(logp, labels.to_vec()), t))
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let t = Tensor::scalar(v.data().iter().sum::<f64>() / v.len() as f64);
        self.push(Op::MeanAll(a), t)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let t = Tensor::scalar(v.data().iter().sum::<f64>());
        self.push(Op::SumAll(a), t)
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let t = self.value(a).reshaped(shape)?;
        Ok(self.push(Op::Reshape(a), t))
    }

    pub fn conv3x3(&mut self, x: NodeId, k: NodeId) -> Result<NodeId> {
        let (vx, vk) = (self.value(x), self.value(k));
        let okay = vx.shape().len() == 4
            && vk.shape().len() == 4
            && vk.shape()[1] == vx.shape()[1]
            && vk.shape()[2] == 3
            && vk.shape()[3] == 3
            && vx.shape()[2] >= 3
            && vx.shape()[3] >= 3;
        if !okay {
            return Err(Error::shape(
                "Graph::conv3x3",
                format!("x {:?} * k {:?}", vx.shape(), vk.shape()),
            ));
        }
        let (n, cin, h, w) = shape4(vx.shape());
        let cout = vk.shape()[0];
        let (oh, ow) = (h - 2, w - 2);
        let mut out = vec![0.0; n * cout * oh * ow];
        for i in 0..n {
            for co in 0..cout {
                let obase = (i * cout + co) * oh * ow;
                for ci in 0..cin {
                    let xbase = (i * cin + ci) * h * w;
                    let kbase = (co * cin + ci) * 9;
                    let kern = &vk.data()[kbase..kbase + 9];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = 0.0;
                            for ky in 0..3 {
                                let xrow = xbase + (oy + ky) * w + ox;
                                let krow = ky * 3;
                                acc += kern[krow] * vx.data()[xrow]
                                    + kern[krow + 1] * vx.data()[xrow + 1]
                                    + kern[krow + 2] * vx.data()[xrow + 2];
                            }
                            out[obase + oy * ow + ox] += acc;
                        }
                    }
                }
            }
        }
        let t = Tensor::new(vec![n, cout, oh, ow], out)?;
        Ok(self.push(Op::Conv3x3(x, k), t))
    }

    pub fn max_pool2(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        if v.shape().len() != 4 || v.shape()[2] < 2 || v.shape()[3] < 2 {
            return Err(Error::shape(
                "Graph::max_pool2",
                format!("expected [N,C,H,W] with H,W >= 2, got {:?}", v.shape()),
            ));
        }
        let (n, c, h, w) = shape4(v.shape());
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![0.0; n * c * oh * ow];
        for img in 0..n * c {
            let base = img * h * w;
            let obase = img * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let p = base + 2 * oy * w + 2 * ox;
                    let m = math::max(
                        math::max(v.data()[p], v.data()[p + 1]),
                        math::max(v.data()[p + w], v.data()[p + w + 1]),
                    );
                    out[obase + oy * ow + ox] = m;
                }
            }
        }
        let t = Tensor::new(vec![n, c, oh, ow], out)?;
        Ok(self.push(Op::MaxPool2(a), t))
    }

    /// Reverse pass from a scalar `root`.
    ///
    /// Returns the exact gradients of `root` with respect to every node;
    /// callers read the leaves they care about. Forward values are computed
    /// eagerly on node creation, so the tape is always in an evaluated state
    /// when this runs. Errors if `root` is not scalar-valued.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::contract(
                "Graph::backward",
                format!("root must be scalar, shape is {:?}", self.value(root).shape()),
            ));
        }
        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.shape()))
            .collect();
        grads[root.0].data_mut()[0] = 1.0;

        for i in (0..=root.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            // Node i is finished once we reach it; move its adjoint out so we
            // can accumulate into parents without aliasing.
            let g = core::mem::replace(&mut grads[i], Tensor::zeros(&[]));
            self.vjp(i, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn vjp(&self, i: usize, g: &Tensor, grads: &mut [Tensor]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                axpy(1.0, g.data(), grads[a.0].data_mut());
                axpy(1.0, g.data(), grads[b.0].data_mut());
            }
            Op::Sub(a, b) => {
                axpy(1.0, g.data(), grads[a.0].data_mut());
                axpy(-1.0, g.data(), grads[b.0].data_mut());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                for ((d, &gv), &bv) in grads[a.0].data_mut().iter_mut().zip(g.data()).zip(vb) {
                    *d += gv * bv;
                }
                for ((d, &gv), &av) in grads[b.0].data_mut().iter_mut().zip(g.data()).zip(va) {
                    *d += gv * av;
                }
            }
            Op::Scale(a, c) => axpy(*c, g.data(), grads[a.0].data_mut()),
            Op::AddRow(a, bias) => {
                axpy(1.0, g.data(), grads[a.0].data_mut());
                let cols = self.value(*bias).len();
                let db = grads[bias.0].data_mut();
                for row in g.data().chunks(cols) {
                    for (d, &gv) in db.iter_mut().zip(row) {
                        *d += gv;
                    }
                }
            }
            Op::AddChannelBias(a, bias) => {
                axpy(1.0, g.data(), grads[a.0].data_mut());
                let (n, c, h, w) = shape4(self.value(*a).shape());
                let plane = h * w;
                let db = grads[bias.0].data_mut();
                for img in 0..n {
                    for ch in 0..c {
                        let base = (img * c + ch) * plane;
                        db[ch] += g.data()[base..base + plane].iter().sum::<f64>();
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (n, k) = (va.shape()[0], va.shape()[1]);
                let m = vb.shape()[1];
                // dA += G · Bᵀ and dB += Aᵀ · G.
                matmul_nt_acc(g.data(), vb.data(), grads[a.0].data_mut(), n, m, k);
                matmul_tn_acc(va.data(), g.data(), grads[b.0].data_mut(), n, k, m);
            }
            Op::Relu(a) => {
                let va = self.value(*a).data();
                for ((d, &gv), &xv) in grads[a.0].data_mut().iter_mut().zip(g.data()).zip(va) {
                    if xv > 0.0 {
                        *d += gv;
                    }
                }
            }
            Op::LogSoftmax(a) => {
                // d logp: dx = g - softmax(x) * rowsum(g).
                let y = self.value(NodeId(i));
                let cols = y.shape()[1];
                let dx = grads[a.0].data_mut();
                for (r, grow) in g.data().chunks(cols).enumerate() {
                    let gsum: f64 = grow.iter().sum();
                    let yrow = &y.data()[r * cols..(r + 1) * cols];
                    let drow = &mut dx[r * cols..(r + 1) * cols];
                    for ((d, &gv), &lv) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d += gv - math::exp(lv) * gsum;
                    }
                }
            }
            Op::NllMean(logp, labels) => {
                let gs = g.data()[0];
                let cols = self.value(*logp).shape()[1];
                let scale = gs / labels.len() as f64;
                let d = grads[logp.0].data_mut();
                for (i, &y) in labels.iter().enumerate() {
                    d[i * cols + y] -= scale;
                }
            }
            Op::MeanAll(a) => {
                let n = self.value(*a).len() as f64;
                let gs = g.data()[0] / n;
                for d in grads[a.0].data_mut() {
                    *d += gs;
                }
            }
            Op::SumAll(a) => {
                let gs = g.data()[0];
                for d in grads[a.0].data_mut() {
                    *d += gs;
                }
            }
            Op::Reshape(a) => axpy(1.0, g.data(), grads[a.0].data_mut()),
            Op::Conv3x3(x, k) => {
                let (vx, vk) = (self.value(*x), self.value(*k));
                let (n, cin, h, w) = shape4(vx.shape());
                let cout = vk.shape()[0];
                let (oh, ow) = (h - 2, w - 2);
                // Accumulate into dK first (reads x), then into dX (reads k).
                {
                    let dk = grads[k.0].data_mut();
                    for img in 0..n {
                        for co in 0..cout {
                            let obase = (img * cout + co) * oh * ow;
                            for ci in 0..cin {
                                let xbase = (img * cin + ci) * h * w;
                                let kbase = (co * cin + ci) * 9;
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        let mut acc = 0.0;
                                        for oy in 0..oh {
                                            let xrow = xbase + (oy + ky) * w + kx;
                                            let orow = obase + oy * ow;
                                            for ox in 0..ow {
                                                acc += g.data()[orow + ox]
                                                    * vx.data()[xrow + ox];
                                            }
                                        }
                                        dk[kbase + ky * 3 + kx] += acc;
                                    }
                                }
                            }
                        }
                    }
                }
                let dx = grads[x.0].data_mut();
                for img in 0..n {
                    for co in 0..cout {
                        let obase = (img * cout + co) * oh * ow;
                        for ci in 0..cin {
                            let xbase = (img * cin + ci) * h * w;
                            let kbase = (co * cin + ci) * 9;
                            let kern = &vk.data()[kbase..kbase + 9];
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let gv = g.data()[obase + oy * ow + ox];
                                    if gv == 0.0 {
                                        continue;
                                    }
                                    for ky in 0..3 {
                                        let xrow = xbase + (oy + ky) * w + ox;
                                        let krow = ky * 3;
                                        dx[xrow] += gv * kern[krow];
                                        dx[xrow + 1] += gv * kern[krow + 1];
                                        dx[xrow + 2] += gv * kern[krow + 2];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::MaxPool2(a) => {
                let v = self.value(*a);
                let (n, c, h, w) = shape4(v.shape());
                let (oh, ow) = (h / 2, w / 2);
                let dx = grads[a.0].data_mut();
                for img in 0..n * c {
                    let base = img * h * w;
                    let obase = img * oh * ow;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let p = base + 2 * oy * w + 2 * ox;
                            // First maximum in row-major window order wins.
                            let idx = [p, p + 1, p + w, p + w + 1];
                            let mut best = idx[0];
                            for &q in &idx[1..] {
                                if v.data()[q] > v.data()[best] {
                                    best = q;
                                }
                            }
                            dx[best] += g.data()[obase + oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn shape4(s: &[usize]) -> (usize, usize, usize, usize) {
    (s[0], s[1], s[2], s[3])
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (d, &s) in y.iter_mut().zip(x) {
        *d += a * s;
    }
}

/// `out = A·B` for row-major `A [n,k]`, `B [k,m]`.
fn matmul_nn(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * m..(i + 1) * m];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out += G·Bᵀ` for `G [n,m]`, `B [k,m]`, `out [n,k]`.
fn matmul_nt_acc(g: &[f64], b: &[f64], out: &mut [f64], n: usize, m: usize, k: usize) {
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        let orow = &mut out[i * k..(i + 1) * k];
        for (o, p) in orow.iter_mut().zip(0..k) {
            let brow = &b[p * m..(p + 1) * m];
            let mut acc = 0.0;
            for (&gv, &bv) in grow.iter().zip(brow) {
                acc += gv * bv;
            }
            *o += acc;
        }
    }
}

/// `out += Aᵀ·G` for `A [n,k]`, `G [n,m]`, `out [k,m]`.
fn matmul_tn_acc(a: &[f64], g: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        let grow = &g[i * m..(i + 1) * m];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * m..(p + 1) * m];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

/// Compare analytic gradients against central finite differences.
///
/// `build` must construct the same scalar function of its leaf tensors on
/// every call; the check re-runs it with each leaf coordinate perturbed by
/// `±step` and reports the worst `|analytic − central| / max(1, |analytic|)`
/// over all coordinates. Large values flag a problem (or a kink such as
/// `|w|` at 0); the function itself never fails on disagreement.
pub fn finite_difference_check<F>(build: F, leaves: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if step <= 0.0 {
        return Err(Error::contract("finite_difference_check", "step must be > 0"));
    }
    let eval = |tensors: &[Tensor]| -> Result<(f64, Option<Gradients>, Vec<NodeId>)> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| g.leaf(t.clone())).collect();
        let root = build(&mut g, &ids)?;
        let v = g.value(root).item().map_err(|_| {
            Error::contract("finite_difference_check", "build must return a scalar node")
        })?;
        Ok((v, Some(g.backward(root)?), ids))
    };

    let (_, grads, ids) = eval(leaves)?;
    let grads = grads.expect("gradients computed");

    let mut worst: f64 = 0.0;
    let mut perturbed: Vec<Tensor> = leaves.to_vec();
    for (li, leaf) in leaves.iter().enumerate() {
        for ci in 0..leaf.len() {
            let orig = leaf.data()[ci];
            perturbed[li].data_mut()[ci] = orig + step;
            let (fp, _, _) = {
                let mut g = Graph::new();
                let ids2: Vec<NodeId> = perturbed.iter().map(|t| g.leaf(t.clone())).collect();
                let root = build(&mut g, &ids2)?;
                (g.value(root).item()?, (), ())
            };
            perturbed[li].data_mut()[ci] = orig - step;
            let fm = {
                let mut g = Graph::new();
                let ids2: Vec<NodeId> = perturbed.iter().map(|t| g.leaf(t.clone())).collect();
                let root = build(&mut g, &ids2)?;
                g.value(root).item()?
            };
            perturbed[li].data_mut()[ci] = orig;

            let central = (fp - fm) / (2.0 * step);
            let analytic = grads.wrt(ids[li]).data()[ci];
            let err = math::abs(analytic - central) / math::max(1.0, math::abs(analytic));
            worst = math::max(worst, err);
        }
    }
    Ok(worst)
}
