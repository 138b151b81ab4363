//! Reverse-mode differentiation over a dynamically recorded tape.
//!
//! Every differentiable computation in the crate is expressed as a sequence
//! of `Tape` operations. The tape owns one node per intermediate tensor
//! (value, gradient slot, and the provenance needed to replay the chain rule
//! backwards). A tape is built fresh for every optimizer step and dropped
//! afterwards; it is strictly single-threaded.
//!
//! The operator set is exactly what the model needs: dense matmul variants,
//! trailing-axis broadcast elementwise ops, row softmax, concatenation and
//! slicing on the last axis, a global mean, the per-row vector–matrix
//! contraction used by the node-adaptive filters, and the binary clamp with
//! its straight-through surrogate.

pub mod check;
pub mod kernels;

use crate::error::{Error, Result};
use kernels::Broadcast;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

impl TensorId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(TensorId, TensorId),
    /// a · bᵀ
    MatmulNt(TensorId, TensorId),
    /// a [n×k] applied to every block of x [B×k×w]
    MatmulLeftBatched(TensorId, TensorId),
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Sigmoid(TensorId),
    Tanh(TensorId),
    Relu(TensorId),
    Abs(TensorId),
    /// mul·x + add, elementwise; only the slope matters going backward
    Affine {
        x: TensorId,
        mul: f64,
    },
    RowSoftmax(TensorId),
    ConcatLast(TensorId, TensorId),
    SliceLast {
        x: TensorId,
        offset: usize,
        len: usize,
    },
    MeanAll(TensorId),
    /// 1 if x > 0 else 0; backward is the windowed straight-through rule.
    BinaryClampSte(TensorId),
    RowwiseVecmat {
        h: TensorId,
        theta: TensorId,
        nc: usize,
        nf: usize,
    },
    Reshape(TensorId),
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

/// A single-use recording of a differentiable computation.
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    fn push(
        &mut self,
        shape: Vec<usize>,
        value: Vec<f64>,
        requires_grad: bool,
        op: Op,
    ) -> TensorId {
        debug_assert_eq!(value.len(), numel(&shape));
        let grad = vec![0.0; value.len()];
        self.nodes.push(Node {
            shape,
            value,
            grad,
            requires_grad,
            op,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn req(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Constant leaf; never accumulates gradient.
    pub fn leaf(&mut self, values: Vec<f64>, shape: Vec<usize>) -> TensorId {
        assert_eq!(values.len(), numel(&shape), "leaf value/shape mismatch");
        self.push(shape, values, false, Op::Leaf)
    }

    /// Learnable leaf; receives gradient on backward.
    pub fn param(&mut self, values: &[f64], shape: &[usize]) -> TensorId {
        assert_eq!(values.len(), numel(shape), "param value/shape mismatch");
        self.push(shape.to_vec(), values.to_vec(), true, Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> TensorId {
        self.leaf(vec![v], vec![])
    }

    pub fn value(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].grad
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Total number of elements held by all nodes, the tape's activation footprint.
    pub fn total_elements(&self) -> usize {
        self.nodes.iter().map(|n| n.value.len()).sum()
    }

    fn dims2(&self, id: TensorId, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(id);
        if s.len() != 2 {
            return Err(Error::Dimension {
                op,
                left: s.to_vec(),
                right: vec![],
            });
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(self.value(a), self.value(b), m, k, n, &mut out);
        let rg = self.req(a) || self.req(b);
        Ok(self.push(vec![m, n], out, rg, Op::Matmul(a, b)))
    }

    /// a [n×k] · x, where x is either k×w or a batch B×k×w multiplied
    /// block by block.
    pub fn matmul_left_batched(&mut self, a: TensorId, x: TensorId) -> Result<TensorId> {
        let xs = self.shape(x).to_vec();
        if xs.len() == 2 {
            return self.matmul(a, x);
        }
        let (n, k) = self.dims2(a, "matmul_left_batched")?;
        if xs.len() != 3 || xs[1] != k {
            return Err(Error::Dimension {
                op: "matmul_left_batched",
                left: self.shape(a).to_vec(),
                right: xs,
            });
        }
        let (batch, w) = (xs[0], xs[2]);
        let mut out = vec![0.0; batch * n * w];
        {
            let av = self.value(a);
            let xv = self.value(x);
            for b in 0..batch {
                kernels::matmul_acc(
                    av,
                    &xv[b * k * w..(b + 1) * k * w],
                    n,
                    k,
                    w,
                    &mut out[b * n * w..(b + 1) * n * w],
                );
            }
        }
        let rg = self.req(a) || self.req(x);
        Ok(self.push(vec![batch, n, w], out, rg, Op::MatmulLeftBatched(a, x)))
    }

    /// a · bᵀ, with `a` of shape m×k and `b` of shape n×k.
    pub fn matmul_nt(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, k) = self.dims2(a, "matmul_nt")?;
        let (n, k2) = self.dims2(b, "matmul_nt")?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul_nt",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_nt_acc(self.value(a), self.value(b), m, k, n, &mut out);
        let rg = self.req(a) || self.req(b);
        Ok(self.push(vec![m, n], out, rg, Op::MatmulNt(a, b)))
    }

    fn binary_elementwise(
        &mut self,
        a: TensorId,
        b: TensorId,
        op_name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<TensorId> {
        let rg = self.req(a) || self.req(b);
        if self.shape(a) == self.shape(b) {
            let out: Vec<f64> = self
                .value(a)
                .iter()
                .zip(self.value(b).iter())
                .map(|(&x, &y)| f(x, y))
                .collect();
            let shape = self.shape(a).to_vec();
            return Ok(self.push(shape, out, rg, op));
        }
        let plan = Broadcast::plan(self.shape(a), self.shape(b)).ok_or(Error::Dimension {
            op: op_name,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        })?;
        let mut out = vec![0.0; plan.element_count()];
        {
            let av = self.value(a);
            let bv = self.value(b);
            plan.for_each(|o, ai, bi| out[o] = f(av[ai], bv[bi]));
        }
        Ok(self.push(plan.out_shape, out, rg, op))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_elementwise(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_elementwise(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_elementwise(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, x: TensorId, f: impl Fn(f64) -> f64, op: Op) -> TensorId {
        let out: Vec<f64> = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.req(x);
        self.push(shape, out, rg, op)
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        self.unary(x, kernels::sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: TensorId) -> TensorId {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        self.unary(x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(x))
    }

    pub fn abs(&mut self, x: TensorId) -> TensorId {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    /// mul·x + add, elementwise with scalar coefficients.
    pub fn affine(&mut self, x: TensorId, mul: f64, add: f64) -> TensorId {
        self.unary(x, |v| mul * v + add, Op::Affine { x, mul })
    }

    pub fn scale(&mut self, x: TensorId, s: f64) -> TensorId {
        self.affine(x, s, 0.0)
    }

    /// Row-stabilized softmax of a 2-d tensor.
    pub fn row_softmax(&mut self, x: TensorId) -> Result<TensorId> {
        let (rows, cols) = self.dims2(x, "row_softmax")?;
        if self.value(x).iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("row_softmax", "non-finite input entry"));
        }
        let mut out = vec![0.0; rows * cols];
        kernels::row_softmax(self.value(x), rows, cols, &mut out);
        let rg = self.req(x);
        Ok(self.push(vec![rows, cols], out, rg, Op::RowSoftmax(x)))
    }

    /// Concatenate along the last axis; all leading dimensions must agree.
    pub fn concat_last(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let mismatch = sa.is_empty()
            || sb.is_empty()
            || sa.len() != sb.len()
            || sa[..sa.len() - 1] != sb[..sb.len() - 1];
        if mismatch {
            return Err(Error::Dimension {
                op: "concat_last",
                left: sa,
                right: sb,
            });
        }
        let p = sa[sa.len() - 1];
        let q = sb[sb.len() - 1];
        let lead: usize = sa[..sa.len() - 1].iter().product();
        let mut out = Vec::with_capacity(lead * (p + q));
        {
            let av = self.value(a);
            let bv = self.value(b);
            for r in 0..lead {
                out.extend_from_slice(&av[r * p..(r + 1) * p]);
                out.extend_from_slice(&bv[r * q..(r + 1) * q]);
            }
        }
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = p + q;
        let rg = self.req(a) || self.req(b);
        Ok(self.push(shape, out, rg, Op::ConcatLast(a, b)))
    }

    /// Columns [offset, offset+len) of the last axis.
    pub fn slice_last(&mut self, x: TensorId, offset: usize, len: usize) -> Result<TensorId> {
        let s = self.shape(x).to_vec();
        if s.is_empty() || offset + len > *s.last().unwrap() {
            return Err(Error::Dimension {
                op: "slice_last",
                left: s,
                right: vec![offset, len],
            });
        }
        let last = *s.last().unwrap();
        let lead: usize = s[..s.len() - 1].iter().product();
        let mut out = Vec::with_capacity(lead * len);
        {
            let xv = self.value(x);
            for r in 0..lead {
                out.extend_from_slice(&xv[r * last + offset..r * last + offset + len]);
            }
        }
        let mut shape = s.clone();
        *shape.last_mut().unwrap() = len;
        let rg = self.req(x);
        Ok(self.push(shape, out, rg, Op::SliceLast { x, offset, len }))
    }

    /// Arithmetic mean over every element, as a scalar.
    pub fn mean_all(&mut self, x: TensorId) -> Result<TensorId> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::Domain("mean_all of an empty tensor".into()));
        }
        let mean = self.value(x).iter().sum::<f64>() / n as f64;
        let rg = self.req(x);
        Ok(self.push(vec![], vec![mean], rg, Op::MeanAll(x)))
    }

    /// Forward: 1 where x > 0, else 0. Backward: straight-through inside [-1, 1].
    pub fn binary_clamp_ste(&mut self, x: TensorId) -> TensorId {
        self.unary(
            x,
            |v| if v > 0.0 { 1.0 } else { 0.0 },
            Op::BinaryClampSte(x),
        )
    }

    /// z[.., i, f] = Σ_c h[.., i, c] · theta[i, c·nf + f]; theta is
    /// n×(nc·nf), h is n×nc or a batch B×n×nc sharing the filter bank.
    pub fn rowwise_vecmat(
        &mut self,
        h: TensorId,
        theta: TensorId,
        nc: usize,
        nf: usize,
    ) -> Result<TensorId> {
        let hs = self.shape(h).to_vec();
        let (tn, tw) = self.dims2(theta, "rowwise_vecmat")?;
        let (batch, n, hc) = match hs.len() {
            2 => (1, hs[0], hs[1]),
            3 => (hs[0], hs[1], hs[2]),
            _ => {
                return Err(Error::Dimension {
                    op: "rowwise_vecmat",
                    left: hs,
                    right: vec![tn, tw],
                })
            }
        };
        if hc != nc || tn != n || tw != nc * nf {
            return Err(Error::Dimension {
                op: "rowwise_vecmat",
                left: hs,
                right: self.shape(theta).to_vec(),
            });
        }
        let mut out = vec![0.0; batch * n * nf];
        {
            let hv = self.value(h);
            let tv = self.value(theta);
            for b in 0..batch {
                kernels::rowwise_vecmat(
                    &hv[b * n * nc..(b + 1) * n * nc],
                    tv,
                    n,
                    nc,
                    nf,
                    &mut out[b * n * nf..(b + 1) * n * nf],
                );
            }
        }
        let shape = if hs.len() == 2 {
            vec![n, nf]
        } else {
            vec![batch, n, nf]
        };
        let rg = self.req(h) || self.req(theta);
        Ok(self.push(shape, out, rg, Op::RowwiseVecmat { h, theta, nc, nf }))
    }

    /// Same buffer, new shape (element counts must match).
    pub fn reshape(&mut self, x: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        if numel(&shape) != self.value(x).len() {
            return Err(Error::Dimension {
                op: "reshape",
                left: self.shape(x).to_vec(),
                right: shape,
            });
        }
        let out = self.value(x).to_vec();
        let rg = self.req(x);
        Ok(self.push(shape, out, rg, Op::Reshape(x)))
    }

    /// Reverse sweep from a scalar root. Single use per tape.
    pub fn backward(&mut self, root: TensorId) -> Result<()> {
        if self.backward_done {
            return Err(Error::numeric("backward", "tape already swept"));
        }
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::Dimension {
                op: "backward",
                left: self.shape(root).to_vec(),
                right: vec![1],
            });
        }
        self.backward_done = true;
        self.nodes[root.0].grad[0] = 1.0;

        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            // Detach this node's gradient so we can write into its inputs.
            let g = std::mem::take(&mut self.nodes[i].grad);
            let op = self.nodes[i].op.clone();
            self.apply_backward(&op, i, &g);
            self.nodes[i].grad = g;
        }
        Ok(())
    }

    fn apply_backward(&mut self, op: &Op, out_idx: usize, g: &[f64]) {
        match *op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[1];
                if self.req(a) {
                    // dA += g · Bᵀ
                    let bv = std::mem::take(&mut self.nodes[b.0].value);
                    kernels::matmul_nt_acc(g, &bv, m, n, k, &mut self.nodes[a.0].grad);
                    self.nodes[b.0].value = bv;
                }
                if self.req(b) {
                    // dB += Aᵀ · g
                    let av = std::mem::take(&mut self.nodes[a.0].value);
                    kernels::matmul_tn_acc(&av, g, m, k, n, &mut self.nodes[b.0].grad);
                    self.nodes[a.0].value = av;
                }
            }
            Op::MatmulLeftBatched(a, x) => {
                let (n, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let xs = &self.nodes[x.0].shape;
                let (batch, w) = (xs[0], xs[2]);
                if self.req(a) {
                    // dA += Σ_b g_b · x_bᵀ
                    let xv = std::mem::take(&mut self.nodes[x.0].value);
                    for b in 0..batch {
                        kernels::matmul_nt_acc(
                            &g[b * n * w..(b + 1) * n * w],
                            &xv[b * k * w..(b + 1) * k * w],
                            n,
                            w,
                            k,
                            &mut self.nodes[a.0].grad,
                        );
                    }
                    self.nodes[x.0].value = xv;
                }
                if self.req(x) {
                    // dx_b += aᵀ · g_b
                    let av = std::mem::take(&mut self.nodes[a.0].value);
                    for b in 0..batch {
                        kernels::matmul_tn_acc(
                            &av,
                            &g[b * n * w..(b + 1) * n * w],
                            n,
                            k,
                            w,
                            &mut self.nodes[x.0].grad[b * k * w..(b + 1) * k * w],
                        );
                    }
                    self.nodes[a.0].value = av;
                }
            }
            Op::MatmulNt(a, b) => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[0];
                if self.req(a) {
                    // dA += g · B
                    let bv = std::mem::take(&mut self.nodes[b.0].value);
                    kernels::matmul_acc(g, &bv, m, n, k, &mut self.nodes[a.0].grad);
                    self.nodes[b.0].value = bv;
                }
                if self.req(b) {
                    // dB += gᵀ · A
                    let av = std::mem::take(&mut self.nodes[a.0].value);
                    kernels::matmul_tn_acc(g, &av, m, n, k, &mut self.nodes[b.0].grad);
                    self.nodes[a.0].value = av;
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let is_mul = matches!(op, Op::Mul(_, _));
                let is_sub = matches!(op, Op::Sub(_, _));
                if a.0 != b.0 && self.nodes[a.0].shape == self.nodes[b.0].shape {
                    // same-shape fast path
                    if self.req(a) {
                        let bv = std::mem::take(&mut self.nodes[b.0].value);
                        let ga = &mut self.nodes[a.0].grad;
                        if is_mul {
                            for ((gi, &go), &bvv) in ga.iter_mut().zip(g).zip(bv.iter()) {
                                *gi += go * bvv;
                            }
                        } else {
                            for (gi, &go) in ga.iter_mut().zip(g) {
                                *gi += go;
                            }
                        }
                        self.nodes[b.0].value = bv;
                    }
                    if self.req(b) {
                        let av = std::mem::take(&mut self.nodes[a.0].value);
                        let gb = &mut self.nodes[b.0].grad;
                        if is_mul {
                            for ((gi, &go), &avv) in gb.iter_mut().zip(g).zip(av.iter()) {
                                *gi += go * avv;
                            }
                        } else if is_sub {
                            for (gi, &go) in gb.iter_mut().zip(g) {
                                *gi -= go;
                            }
                        } else {
                            for (gi, &go) in gb.iter_mut().zip(g) {
                                *gi += go;
                            }
                        }
                        self.nodes[a.0].value = av;
                    }
                    return;
                }
                let plan = Broadcast::plan(&self.nodes[a.0].shape, &self.nodes[b.0].shape).unwrap();
                if a.0 == b.0 {
                    // same tensor on both sides: accumulate both contributions
                    let (ra, av) = (self.req(a), self.nodes[a.0].value.clone());
                    if ra {
                        let ga = &mut self.nodes[a.0].grad;
                        plan.for_each(|o, ai, bi| {
                            if is_mul {
                                ga[ai] += g[o] * av[bi];
                                ga[bi] += g[o] * av[ai];
                            } else if is_sub {
                                ga[ai] += g[o];
                                ga[bi] -= g[o];
                            } else {
                                ga[ai] += g[o];
                                ga[bi] += g[o];
                            }
                        });
                    }
                    return;
                }
                if self.req(a) {
                    let bv = std::mem::take(&mut self.nodes[b.0].value);
                    let ga = &mut self.nodes[a.0].grad;
                    plan.for_each(|o, ai, bi| {
                        ga[ai] += if is_mul { g[o] * bv[bi] } else { g[o] };
                    });
                    self.nodes[b.0].value = bv;
                }
                if self.req(b) {
                    let av = std::mem::take(&mut self.nodes[a.0].value);
                    let gb = &mut self.nodes[b.0].grad;
                    plan.for_each(|o, ai, bi| {
                        gb[bi] += if is_mul {
                            g[o] * av[ai]
                        } else if is_sub {
                            -g[o]
                        } else {
                            g[o]
                        };
                    });
                    self.nodes[a.0].value = av;
                }
            }
            Op::Sigmoid(x) => {
                if self.req(x) {
                    let sv = std::mem::take(&mut self.nodes[out_idx].value);
                    let gx = &mut self.nodes[x.0].grad;
                    for (i, &s) in sv.iter().enumerate() {
                        gx[i] += g[i] * s * (1.0 - s);
                    }
                    self.nodes[out_idx].value = sv;
                }
            }
            Op::Tanh(x) => {
                if self.req(x) {
                    let tv = std::mem::take(&mut self.nodes[out_idx].value);
                    let gx = &mut self.nodes[x.0].grad;
                    for (i, &t) in tv.iter().enumerate() {
                        gx[i] += g[i] * (1.0 - t * t);
                    }
                    self.nodes[out_idx].value = tv;
                }
            }
            Op::Relu(x) => {
                if self.req(x) {
                    let xv = std::mem::take(&mut self.nodes[x.0].value);
                    for (i, &v) in xv.iter().enumerate() {
                        if v > 0.0 {
                            self.nodes[x.0].grad[i] += g[i];
                        }
                    }
                    self.nodes[x.0].value = xv;
                }
            }
            Op::Abs(x) => {
                if self.req(x) {
                    let xv = std::mem::take(&mut self.nodes[x.0].value);
                    for (i, &v) in xv.iter().enumerate() {
                        // sign(0) taken as 0
                        let s = if v > 0.0 {
                            1.0
                        } else if v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        self.nodes[x.0].grad[i] += g[i] * s;
                    }
                    self.nodes[x.0].value = xv;
                }
            }
            Op::Affine { x, mul } => {
                if self.req(x) {
                    let gx = &mut self.nodes[x.0].grad;
                    for (i, &go) in g.iter().enumerate() {
                        gx[i] += go * mul;
                    }
                }
            }
            Op::RowSoftmax(x) => {
                if self.req(x) {
                    let sv = std::mem::take(&mut self.nodes[out_idx].value);
                    let cols = self.nodes[out_idx].shape[1];
                    let rows = self.nodes[out_idx].shape[0];
                    let gx = &mut self.nodes[x.0].grad;
                    for r in 0..rows {
                        let s = &sv[r * cols..(r + 1) * cols];
                        let go = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = s.iter().zip(go.iter()).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            gx[r * cols + j] += s[j] * (go[j] - dot);
                        }
                    }
                    self.nodes[out_idx].value = sv;
                }
            }
            Op::ConcatLast(a, b) => {
                let p = *self.nodes[a.0].shape.last().unwrap();
                let q = *self.nodes[b.0].shape.last().unwrap();
                let lead = self.nodes[a.0].value.len() / p;
                if self.req(a) {
                    let ga = &mut self.nodes[a.0].grad;
                    for r in 0..lead {
                        for j in 0..p {
                            ga[r * p + j] += g[r * (p + q) + j];
                        }
                    }
                }
                if self.req(b) {
                    let gb = &mut self.nodes[b.0].grad;
                    for r in 0..lead {
                        for j in 0..q {
                            gb[r * q + j] += g[r * (p + q) + p + j];
                        }
                    }
                }
            }
            Op::SliceLast { x, offset, len } => {
                if self.req(x) {
                    let last = *self.nodes[x.0].shape.last().unwrap();
                    let lead = self.nodes[x.0].value.len() / last;
                    let gx = &mut self.nodes[x.0].grad;
                    for r in 0..lead {
                        for j in 0..len {
                            gx[r * last + offset + j] += g[r * len + j];
                        }
                    }
                }
            }
            Op::MeanAll(x) => {
                if self.req(x) {
                    let n = self.nodes[x.0].value.len() as f64;
                    let go = g[0] / n;
                    for gi in self.nodes[x.0].grad.iter_mut() {
                        *gi += go;
                    }
                }
            }
            Op::BinaryClampSte(x) => {
                if self.req(x) {
                    let xv = std::mem::take(&mut self.nodes[x.0].value);
                    for (i, &v) in xv.iter().enumerate() {
                        if (-1.0..=1.0).contains(&v) {
                            self.nodes[x.0].grad[i] += g[i];
                        }
                    }
                    self.nodes[x.0].value = xv;
                }
            }
            Op::RowwiseVecmat { h, theta, nc, nf } => {
                let hs = &self.nodes[h.0].shape;
                let (batch, n) = if hs.len() == 2 {
                    (1, hs[0])
                } else {
                    (hs[0], hs[1])
                };
                if self.req(h) {
                    let tv = std::mem::take(&mut self.nodes[theta.0].value);
                    let gh = &mut self.nodes[h.0].grad;
                    for b in 0..batch {
                        let g_b = &g[b * n * nf..(b + 1) * n * nf];
                        let gh_b = &mut gh[b * n * nc..(b + 1) * n * nc];
                        for i in 0..n {
                            let g_row = &g_b[i * nf..(i + 1) * nf];
                            let t_row = &tv[i * nc * nf..(i + 1) * nc * nf];
                            for c in 0..nc {
                                let mut acc = 0.0;
                                let t_slice = &t_row[c * nf..(c + 1) * nf];
                                for (&gv, &tvv) in g_row.iter().zip(t_slice.iter()) {
                                    acc += gv * tvv;
                                }
                                gh_b[i * nc + c] += acc;
                            }
                        }
                    }
                    self.nodes[theta.0].value = tv;
                }
                if self.req(theta) {
                    let hv = std::mem::take(&mut self.nodes[h.0].value);
                    let gt = &mut self.nodes[theta.0].grad;
                    for b in 0..batch {
                        let g_b = &g[b * n * nf..(b + 1) * n * nf];
                        let h_b = &hv[b * n * nc..(b + 1) * n * nc];
                        for i in 0..n {
                            let g_row = &g_b[i * nf..(i + 1) * nf];
                            let t_row = &mut gt[i * nc * nf..(i + 1) * nc * nf];
                            for c in 0..nc {
                                let hc = h_b[i * nc + c];
                                let t_slice = &mut t_row[c * nf..(c + 1) * nf];
                                for (tg, &gv) in t_slice.iter_mut().zip(g_row.iter()) {
                                    *tg += hc * gv;
                                }
                            }
                        }
                    }
                    self.nodes[h.0].value = hv;
                }
            }
            Op::Reshape(x) => {
                if self.req(x) {
                    let gx = &mut self.nodes[x.0].grad;
                    for (i, &go) in g.iter().enumerate() {
                        gx[i] += go;
                    }
                }
            }
        }
    }
}
