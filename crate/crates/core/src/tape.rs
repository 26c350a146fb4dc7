//! Reverse-mode autodiff over an explicit operation tape.
//!
//! Forward calls execute eagerly: each op validates shapes, computes its
//! output into a fresh node, and appends a record naming its input node ids.
//! `backward` replays the records in reverse, accumulating gradients per node.
//! Saved activations are simply the node buffers themselves, so records carry
//! ids and op metadata only.
//!
//! The tape supports `mark`/`truncate` so an autoregressive rollout can keep
//! parameter leaves resident while rebuilding the per-frame subgraph.

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;
use rand_chacha::ChaCha8Rng;

pub type NodeId = usize;

/// A named trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Ordered collection of parameters. Order is load-bearing: tape leases,
/// optimizer state and checkpoints all index it positionally.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

pub type ParamId = usize;

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter { name: name.into(), value, grad });
        self.params.len() - 1
    }

    /// Weight tensor initialized uniform in +-sqrt(1/fan_in).
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let bound = (1.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng::uniform_range(rng, -bound, bound)).collect();
        self.add(name, Tensor::from_vec(shape, data).expect("shape/product"))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    /// Total number of scalar values across all parameters.
    pub fn value_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            for g in p.grad.data_mut() {
                *g = 0.0;
            }
        }
    }

    /// Snapshot of all parameter values, for best-checkpoint tracking.
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snap: &[Tensor]) {
        assert_eq!(snap.len(), self.params.len(), "snapshot arity");
        for (p, s) in self.params.iter_mut().zip(snap) {
            p.value = s.clone();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryKind {
    Tanh,
    /// Tanh clamped into the open interval (-1, 1). Plain tanh rounds to
    /// exactly 1.0 for inputs above ~19.06, which would break downstream
    /// half-open interval contracts.
    TanhOpen,
    Sigmoid,
    Relu,
    Abs,
}

/// Largest f64 strictly below 1.0.
const INTERIOR_ONE: f64 = f64::from_bits(0x3FEF_FFFF_FFFF_FFFF);

#[derive(Debug, Clone)]
enum Rec {
    MatVec { w: NodeId, x: NodeId, out: NodeId },
    Linear { w: NodeId, x: NodeId, b: NodeId, out: NodeId },
    Conv1d { x: NodeId, kernel: NodeId, dilation: usize, out: NodeId },
    BiasChannels { x: NodeId, b: NodeId, out: NodeId },
    Unary { kind: UnaryKind, x: NodeId, out: NodeId },
    Add { a: NodeId, b: NodeId, out: NodeId },
    Sub { a: NodeId, b: NodeId, out: NodeId },
    Mul { a: NodeId, b: NodeId, out: NodeId },
    Scale { x: NodeId, c: f64, out: NodeId },
    AddN { xs: Vec<NodeId>, out: NodeId },
    ConcatRows { xs: Vec<NodeId>, out: NodeId },
    StackCols { xs: Vec<NodeId>, out: NodeId },
    Column { x: NodeId, idx: usize, out: NodeId },
    Rows { x: NodeId, start: usize, len: usize, out: NodeId },
    Blend { zm: NodeId, zd: NodeId, delta: NodeId, out: NodeId },
    MseLoss { pred: NodeId, target: NodeId, out: NodeId },
    SumAll { x: NodeId, out: NodeId },
    /// Forward identity whose backward negates the gradient. Exists solely so
    /// the finite-difference harness can prove it detects a broken backward.
    SignFlipProbe { x: NodeId, out: NodeId },
}

#[derive(Debug, Clone, Copy)]
pub struct TapeMark {
    nodes: usize,
    records: usize,
}

/// Contiguous run of leaf nodes holding a snapshot of a ParamSet.
#[derive(Debug, Clone, Copy)]
pub struct ParamLeases {
    base: NodeId,
    count: usize,
}

impl ParamLeases {
    pub fn node(&self, param: ParamId) -> NodeId {
        debug_assert!(param < self.count);
        self.base + param
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Tensor>,
    records: Vec<Rec>,
}

/// Per-node gradients produced by `Tape::backward`.
#[derive(Debug)]
pub struct Gradients {
    g: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.g.get(id).and_then(|o| o.as_deref())
    }
}

/// 4-lane unrolled dot product. Lane sums combine in a fixed order, so the
/// result is deterministic for a given input.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..chunks {
        let j = i * 4;
        s0 += a[j] * b[j];
        s1 += a[j + 1] * b[j + 1];
        s2 += a[j + 2] * b[j + 2];
        s3 += a[j + 3] * b[j + 3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for j in chunks * 4..n {
        s += a[j] * b[j];
    }
    s
}

/// out += s * x, elementwise over equal-length slices.
fn axpy(out: &mut [f64], s: f64, x: &[f64]) {
    debug_assert_eq!(out.len(), x.len());
    for (o, v) in out.iter_mut().zip(x) {
        *o += s * v;
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn mark(&self) -> TapeMark {
        TapeMark { nodes: self.nodes.len(), records: self.records.len() }
    }

    /// Drop every node and record created after `mark`. Parameter leaves
    /// registered before the mark stay valid.
    pub fn truncate(&mut self, mark: TapeMark) {
        self.nodes.truncate(mark.nodes);
        self.records.truncate(mark.records);
    }

    /// New leaf holding `t`. Leaves record nothing; gradients may still be
    /// accumulated into them during backward.
    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.nodes.push(t);
        self.nodes.len() - 1
    }

    /// Smallest |v| among all values feeding a relu or abs on this tape, or
    /// +inf when none do. Finite-difference checks use it to keep probe steps
    /// from crossing those kinks.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for rec in &self.records {
            if let Rec::Unary { kind: UnaryKind::Relu | UnaryKind::Abs, x, .. } = rec {
                for &v in self.nodes[*x].data() {
                    margin = margin.min(v.abs());
                }
            }
        }
        margin
    }

    /// Register every parameter of `params` as consecutive leaves.
    pub fn register_params(&mut self, params: &ParamSet) -> ParamLeases {
        let base = self.nodes.len();
        for p in params.iter() {
            self.nodes.push(p.value.clone());
        }
        ParamLeases { base, count: params.len() }
    }

    fn push(&mut self, t: Tensor) -> NodeId {
        self.nodes.push(t);
        self.nodes.len() - 1
    }

    /// y = W x (no bias). W is [m, n], x is [n].
    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let (wt, xt) = (&self.nodes[w], &self.nodes[x]);
        if wt.rank() != 2 || xt.rank() != 1 || wt.shape()[1] != xt.len() {
            return Err(Error::shape(
                "matvec",
                format!("W {:?} x {:?}", wt.shape(), xt.shape()),
            ));
        }
        let (m, n) = (wt.shape()[0], wt.shape()[1]);
        let mut out = vec![0.0; m];
        for i in 0..m {
            out[i] = dot(&wt.data()[i * n..(i + 1) * n], xt.data());
        }
        let id = self.push(Tensor::from_vec(&[m], out)?);
        self.records.push(Rec::MatVec { w, x, out: id });
        Ok(id)
    }

    /// y = W x + b. W is [m, n], x is [n], b is [m].
    pub fn linear(&mut self, w: NodeId, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (wt, xt, bt) = (&self.nodes[w], &self.nodes[x], &self.nodes[b]);
        if wt.rank() != 2
            || xt.rank() != 1
            || wt.shape()[1] != xt.len()
            || bt.len() != wt.shape()[0]
        {
            return Err(Error::shape(
                "linear",
                format!("W {:?} x {:?} b {:?}", wt.shape(), xt.shape(), bt.shape()),
            ));
        }
        let (m, n) = (wt.shape()[0], wt.shape()[1]);
        let mut out = vec![0.0; m];
        for i in 0..m {
            out[i] = dot(&wt.data()[i * n..(i + 1) * n], xt.data()) + bt.at(i);
        }
        let id = self.push(Tensor::from_vec(&[m], out)?);
        self.records.push(Rec::Linear { w, x, b, out: id });
        Ok(id)
    }

    /// Causal dilated 1-D convolution with left zero padding.
    ///
    /// x is [C_in, T], kernel is [C_out, C_in, K]; output [C_out, T] with
    /// out[c, t] = sum_{i, j} kernel[c, i, j] * x[i, t - j*dilation], where
    /// x is treated as zero for negative time. Output frame t therefore never
    /// reads input frames later than t.
    pub fn conv1d(&mut self, x: NodeId, kernel: NodeId, dilation: usize) -> Result<NodeId> {
        if dilation == 0 {
            return Err(Error::Config("conv1d dilation must be >= 1".into()));
        }
        let (xt, kt) = (&self.nodes[x], &self.nodes[kernel]);
        if xt.rank() != 2 || kt.rank() != 3 || kt.shape()[1] != xt.shape()[0] {
            return Err(Error::shape(
                "conv1d",
                format!("x {:?} kernel {:?}", xt.shape(), kt.shape()),
            ));
        }
        let (c_in, t_len) = (xt.shape()[0], xt.shape()[1]);
        let (c_out, k_len) = (kt.shape()[0], kt.shape()[2]);
        let mut out = vec![0.0; c_out * t_len];
        for c in 0..c_out {
            let orow = &mut out[c * t_len..(c + 1) * t_len];
            for i in 0..c_in {
                let xrow = &xt.data()[i * t_len..(i + 1) * t_len];
                for j in 0..k_len {
                    let s = kt.data()[(c * c_in + i) * k_len + j];
                    if s == 0.0 {
                        continue;
                    }
                    let shift = j * dilation;
                    if shift >= t_len {
                        continue;
                    }
                    axpy(&mut orow[shift..], s, &xrow[..t_len - shift]);
                }
            }
        }
        let id = self.push(Tensor::from_vec(&[c_out, t_len], out)?);
        self.records.push(Rec::Conv1d { x, kernel, dilation, out: id });
        Ok(id)
    }

    /// Adds a per-channel bias to a [C, T] activation.
    pub fn bias_channels(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (xt, bt) = (&self.nodes[x], &self.nodes[b]);
        if xt.rank() != 2 || bt.rank() != 1 || bt.len() != xt.shape()[0] {
            return Err(Error::shape(
                "bias_channels",
                format!("x {:?} b {:?}", xt.shape(), bt.shape()),
            ));
        }
        let (c_n, t_len) = (xt.shape()[0], xt.shape()[1]);
        let mut out = xt.data().to_vec();
        for c in 0..c_n {
            let bv = bt.at(c);
            for v in &mut out[c * t_len..(c + 1) * t_len] {
                *v += bv;
            }
        }
        let id = self.push(Tensor::from_vec(&[c_n, t_len], out)?);
        self.records.push(Rec::BiasChannels { x, b, out: id });
        Ok(id)
    }

    pub fn unary(&mut self, kind: UnaryKind, x: NodeId) -> NodeId {
        let xt = &self.nodes[x];
        let data: Vec<f64> = xt
            .data()
            .iter()
            .map(|&v| match kind {
                UnaryKind::Tanh => v.tanh(),
                UnaryKind::TanhOpen => v.tanh().clamp(-INTERIOR_ONE, INTERIOR_ONE),
                UnaryKind::Sigmoid => 1.0 / (1.0 + (-v).exp()),
                UnaryKind::Relu => {
                    if v > 0.0 {
                        v
                    } else {
                        0.0
                    }
                }
                UnaryKind::Abs => v.abs(),
            })
            .collect();
        let shape = xt.shape().to_vec();
        let id = self.push(Tensor::from_vec(&shape, data).expect("same shape"));
        self.records.push(Rec::Unary { kind, x, out: id });
        id
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(UnaryKind::Tanh, x)
    }

    /// Tanh whose outputs never round to ±1.0; see [`UnaryKind::TanhOpen`].
    pub fn tanh_open(&mut self, x: NodeId) -> NodeId {
        self.unary(UnaryKind::TanhOpen, x)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(UnaryKind::Sigmoid, x)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(UnaryKind::Relu, x)
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        self.unary(UnaryKind::Abs, x)
    }

    fn binary_shape_check(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.nodes[a].shape() != self.nodes[b].shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.nodes[a].shape(), self.nodes[b].shape()),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_shape_check("add", a, b)?;
        let data: Vec<f64> =
            self.nodes[a].data().iter().zip(self.nodes[b].data()).map(|(x, y)| x + y).collect();
        let shape = self.nodes[a].shape().to_vec();
        let id = self.push(Tensor::from_vec(&shape, data)?);
        self.records.push(Rec::Add { a, b, out: id });
        Ok(id)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_shape_check("sub", a, b)?;
        let data: Vec<f64> =
            self.nodes[a].data().iter().zip(self.nodes[b].data()).map(|(x, y)| x - y).collect();
        let shape = self.nodes[a].shape().to_vec();
        let id = self.push(Tensor::from_vec(&shape, data)?);
        self.records.push(Rec::Sub { a, b, out: id });
        Ok(id)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_shape_check("mul", a, b)?;
        let data: Vec<f64> =
            self.nodes[a].data().iter().zip(self.nodes[b].data()).map(|(x, y)| x * y).collect();
        let shape = self.nodes[a].shape().to_vec();
        let id = self.push(Tensor::from_vec(&shape, data)?);
        self.records.push(Rec::Mul { a, b, out: id });
        Ok(id)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let data: Vec<f64> = self.nodes[x].data().iter().map(|v| v * c).collect();
        let shape = self.nodes[x].shape().to_vec();
        let id = self.push(Tensor::from_vec(&shape, data).expect("same shape"));
        self.records.push(Rec::Scale { x, c, out: id });
        id
    }

    pub fn add_n(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::shape("add_n", "empty operand list"));
        }
        for &x in &xs[1..] {
            if self.nodes[x].shape() != self.nodes[xs[0]].shape() {
                return Err(Error::shape(
                    "add_n",
                    format!("{:?} vs {:?}", self.nodes[x].shape(), self.nodes[xs[0]].shape()),
                ));
            }
        }
        let mut data = self.nodes[xs[0]].data().to_vec();
        for &x in &xs[1..] {
            for (d, v) in data.iter_mut().zip(self.nodes[x].data()) {
                *d += v;
            }
        }
        let shape = self.nodes[xs[0]].shape().to_vec();
        let id = self.push(Tensor::from_vec(&shape, data)?);
        self.records.push(Rec::AddN { xs: xs.to_vec(), out: id });
        Ok(id)
    }

    /// Concatenate along the channel axis. Inputs must be all rank-1 (giving
    /// a longer vector) or all rank-2 with equal column counts.
    pub fn concat_rows(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::shape("concat_rows", "empty operand list"));
        }
        let rank = self.nodes[xs[0]].rank();
        let out = if rank == 1 {
            let mut data = Vec::new();
            for &x in xs {
                if self.nodes[x].rank() != 1 {
                    return Err(Error::shape("concat_rows", "mixed ranks"));
                }
                data.extend_from_slice(self.nodes[x].data());
            }
            let n = data.len();
            Tensor::from_vec(&[n], data)?
        } else {
            let cols = self.nodes[xs[0]].shape()[1];
            let mut rows = 0;
            for &x in xs {
                let t = &self.nodes[x];
                if t.rank() != 2 || t.shape()[1] != cols {
                    return Err(Error::shape(
                        "concat_rows",
                        format!("expected [*, {cols}], got {:?}", t.shape()),
                    ));
                }
                rows += t.shape()[0];
            }
            let mut data = Vec::with_capacity(rows * cols);
            for &x in xs {
                data.extend_from_slice(self.nodes[x].data());
            }
            Tensor::from_vec(&[rows, cols], data)?
        };
        let id = self.push(out);
        self.records.push(Rec::ConcatRows { xs: xs.to_vec(), out: id });
        Ok(id)
    }

    /// Stack rank-1 vectors as the columns of a [p, n] matrix.
    pub fn stack_cols(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::shape("stack_cols", "empty operand list"));
        }
        let p = self.nodes[xs[0]].len();
        for &x in xs {
            if self.nodes[x].rank() != 1 || self.nodes[x].len() != p {
                return Err(Error::shape(
                    "stack_cols",
                    format!("expected [{p}], got {:?}", self.nodes[x].shape()),
                ));
            }
        }
        let n = xs.len();
        let mut t = Tensor::zeros(&[p, n]);
        for (c, &x) in xs.iter().enumerate() {
            // borrow dance: copy the column out first
            let col: Vec<f64> = self.nodes[x].data().to_vec();
            t.set_col(c, &col);
        }
        let id = self.push(t);
        self.records.push(Rec::StackCols { xs: xs.to_vec(), out: id });
        Ok(id)
    }

    /// Extract column `idx` of a [r, c] matrix as a rank-1 vector.
    pub fn column(&mut self, x: NodeId, idx: usize) -> Result<NodeId> {
        let xt = &self.nodes[x];
        if xt.rank() != 2 || idx >= xt.shape()[1] {
            return Err(Error::shape(
                "column",
                format!("index {idx} of {:?}", xt.shape()),
            ));
        }
        let col = xt.col(idx);
        let n = col.len();
        let id = self.push(Tensor::from_vec(&[n], col)?);
        self.records.push(Rec::Column { x, idx, out: id });
        Ok(id)
    }

    /// Slice `len` rows starting at `start`. Works on rank-1 (subvector) and
    /// rank-2 (row block) nodes.
    pub fn rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let xt = &self.nodes[x];
        let out = match xt.rank() {
            1 => {
                if start + len > xt.len() {
                    return Err(Error::shape(
                        "rows",
                        format!("[{start}, {}) of {:?}", start + len, xt.shape()),
                    ));
                }
                Tensor::from_vec(&[len], xt.data()[start..start + len].to_vec())?
            }
            2 => {
                let (r, c) = (xt.shape()[0], xt.shape()[1]);
                if start + len > r {
                    return Err(Error::shape(
                        "rows",
                        format!("[{start}, {}) of {:?}", start + len, xt.shape()),
                    ));
                }
                Tensor::from_vec(&[len, c], xt.data()[start * c..(start + len) * c].to_vec())?
            }
            _ => return Err(Error::shape("rows", format!("rank {} input", xt.rank()))),
        };
        let id = self.push(out);
        self.records.push(Rec::Rows { x, start, len, out: id });
        Ok(id)
    }

    /// Per-component convex blend out = (1 - delta) * zm + delta * zd.
    ///
    /// Components where delta is exactly zero copy zm bit-for-bit, so equal
    /// branch predictions pass through unchanged.
    pub fn blend(&mut self, zm: NodeId, zd: NodeId, delta: NodeId) -> Result<NodeId> {
        self.binary_shape_check("blend", zm, zd)?;
        self.binary_shape_check("blend", zm, delta)?;
        let n = self.nodes[zm].len();
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            let d = self.nodes[delta].at(i);
            let m = self.nodes[zm].at(i);
            let v = if d == 0.0 { m } else { (1.0 - d) * m + d * self.nodes[zd].at(i) };
            data.push(v);
        }
        let shape = self.nodes[zm].shape().to_vec();
        let id = self.push(Tensor::from_vec(&shape, data)?);
        self.records.push(Rec::Blend { zm, zd, delta, out: id });
        Ok(id)
    }

    /// Mean squared error normalized by frame count: sum((pred - target)^2) / F
    /// where F is the number of frames (columns for rank-2, 1 for rank-1).
    pub fn mse_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        self.binary_shape_check("mse_loss", pred, target)?;
        let frames = self.nodes[pred].frames() as f64;
        let sse: f64 = self.nodes[pred]
            .data()
            .iter()
            .zip(self.nodes[target].data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let id = self.push(Tensor::scalar(sse / frames));
        self.records.push(Rec::MseLoss { pred, target, out: id });
        Ok(id)
    }

    /// Scalar sum of all elements; gradcheck reduction.
    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.nodes[x].data().iter().sum();
        let id = self.push(Tensor::scalar(s));
        self.records.push(Rec::SumAll { x, out: id });
        id
    }

    /// See `Rec::SignFlipProbe`; test fixture only.
    pub fn sign_flip_probe(&mut self, x: NodeId) -> NodeId {
        let t = self.nodes[x].clone();
        let id = self.push(t);
        self.records.push(Rec::SignFlipProbe { x, out: id });
        id
    }

    /// Reverse pass from a scalar loss node. Returns per-node gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.nodes[loss].len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.nodes[loss].shape()),
            ));
        }
        let mut g: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        g[loss] = Some(vec![1.0]);

        let grab = |g: &mut Vec<Option<Vec<f64>>>, id: NodeId, len: usize| -> Vec<f64> {
            g[id].get_or_insert_with(|| vec![0.0; len]);
            g[id].take().unwrap()
        };

        for rec in self.records.iter().rev() {
            match rec {
                Rec::MatVec { w, x, out } | Rec::Linear { w, x, b: _, out } => {
                    let go = match &g[*out] {
                        Some(v) => v.clone(),
                        None => continue,
                    };
                    let (m, n) = (self.nodes[*w].shape()[0], self.nodes[*w].shape()[1]);
                    {
                        let mut gw = grab(&mut g, *w, m * n);
                        let xv = self.nodes[*x].data();
                        for i in 0..m {
                            axpy(&mut gw[i * n..(i + 1) * n], go[i], xv);
                        }
                        g[*w] = Some(gw);
                    }
                    {
                        let mut gx = grab(&mut g, *x, n);
                        let wv = self.nodes[*w].data();
                        for i in 0..m {
                            axpy(&mut gx, go[i], &wv[i * n..(i + 1) * n]);
                        }
                        g[*x] = Some(gx);
                    }
                    if let Rec::Linear { b, .. } = rec {
                        let mut gb = grab(&mut g, *b, m);
                        for i in 0..m {
                            gb[i] += go[i];
                        }
                        g[*b] = Some(gb);
                    }
                }
                Rec::Conv1d { x, kernel, dilation, out } => {
                    let go = match &g[*out] {
                        Some(v) => v.clone(),
                        None => continue,
                    };
                    let (c_in, t_len) =
                        (self.nodes[*x].shape()[0], self.nodes[*x].shape()[1]);
                    let (c_out, k_len) =
                        (self.nodes[*kernel].shape()[0], self.nodes[*kernel].shape()[2]);
                    {
                        let mut gk = grab(&mut g, *kernel, c_out * c_in * k_len);
                        let xv = self.nodes[*x].data();
                        for c in 0..c_out {
                            let grow = &go[c * t_len..(c + 1) * t_len];
                            for i in 0..c_in {
                                let xrow = &xv[i * t_len..(i + 1) * t_len];
                                for j in 0..k_len {
                                    let shift = j * *dilation;
                                    if shift >= t_len {
                                        continue;
                                    }
                                    gk[(c * c_in + i) * k_len + j] +=
                                        dot(&grow[shift..], &xrow[..t_len - shift]);
                                }
                            }
                        }
                        g[*kernel] = Some(gk);
                    }
                    {
                        let mut gx = grab(&mut g, *x, c_in * t_len);
                        let kv = self.nodes[*kernel].data();
                        for c in 0..c_out {
                            let grow = &go[c * t_len..(c + 1) * t_len];
                            for i in 0..c_in {
                                let gxrow = &mut gx[i * t_len..(i + 1) * t_len];
                                for j in 0..k_len {
                                    let s = kv[(c * c_in + i) * k_len + j];
                                    if s == 0.0 {
                                        continue;
                                    }
                                    let shift = j * *dilation;
                                    if shift >= t_len {
                                        continue;
                                    }
                                    axpy(&mut gxrow[..t_len - shift], s, &grow[shift..]);
                                }
                            }
                        }
                        g[*x] = Some(gx);
                    }
                }
                Rec::BiasChannels { x, b, out } => {
                    let go = match &g[*out] {
                        Some(v) => v.clone(),
                        None => continue,
                    };
                    let (c_n, t_len) = (self.nodes[*x].shape()[0], self.nodes[*x].shape()[1]);
                    {
                        let mut gx = grab(&mut g, *x, c_n * t_len);
                        axpy(&mut gx, 1.0, &go);
                        g[*x] = Some(gx);
                    }
                    {
                        let mut gb = grab(&mut g, *b, c_n);
                        for c in 0..c_n {
                            gb[c] += go[c * t_len..(c + 1) * t_len].iter().sum::<f64>();
                        }
                        g[*b] = Some(gb);
                    }
                }
                Rec::Unary { kind, x, out } => {
                    let go = match &g[*out] {
                        Some(v) => v.clone(),
                        None => continue,
                    };
                    let mut gx = grab(&mut g, *x, self.nodes[*x].len());
                    let xv = self.nodes[*x].data();
                    let yv = self.nodes[*out].data();
                    for i in 0..gx.len() {
                        let d = match kind {
                            // for the clamped variant the true slope past the
                            // clamp is below 4e-18, indistinguishable from the
                            // 1 - y^2 rule at the clamped output
                            UnaryKind::Tanh | UnaryKind::TanhOpen => 1.0 - yv[i] * yv[i],
                            UnaryKind::Sigmoid => yv[i] * (1.0 - yv[i]),
                            UnaryKind::Relu => {
                                if xv[i] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            // derivative at exactly zero is defined as zero
                            UnaryKind::Abs => {
                                if xv[i] > 0.0 {
                                    1.0
                                } else if xv[i] < 0.0 {
                                    -1.0
                                } else {
                                    0.0
                                }
                            }
                        };
                        gx[i] += go[i] * d;
                    }
                    g[*x] = Some(gx);
                }
                Rec::Add { a, b, out } => {
                    let go = match &g[*out] {
                        Some(v) => v.clone(),
                        None => continue,
                    };
                    for id in [a, b] {
                        let mut gi = grab(&mut g, *id, go.len());
                        axpy(&mut gi, 1.0, &go);
                        g[*id] = Some(gi);
                    }
                }
                Rec::Sub { a, b, out } => {
                    let go = match &g[*out] {
                        Some(v) => v.clone(),
                        None => continue,
                    };
                    {
                        let mut ga = grab(&mut g, *a, go.len());
                        axpy(&mut ga, 1.0, &go);
                        g[*a] = Some(ga);
                    }
                    {
                        let mut gb = grab(&mut g, *b, go.len());
                        axpy(&mut gb, -1.0, &go);
                        g[*b] = Some(gb);
                    }
                }
                Rec::Mul { a, b, out } => {
                    let go = match &g[*out] {
                        Some(v) => v.clone(),
                        None => continue,
                    };
                    {
                        let mut ga = grab(&mut g, *a, go.len());
                        let bv = self.nodes[*b].data();
                        for i in 0..ga.len() {
                            ga[i] += go[i] * bv[i];
                        }
                        g[*a] = Some(ga);
                    }
                    {
                        let mut gb = grab(&mut g, *b, go.len());
                        let av = self.nodes[*a].data();
                        for i in 0..gb.len() {
                            gb[i] += go[i] * av[i];
                        }
                        g[*b] = Some(gb);
                    }
                }
                Rec::Scale { x, c, out } => {
                    let go = match &g[*out] {
                        Some(v) => v.clone(),
                        None => continue,
                    };
                    let mut gx = grab(&mut g, *x, go.len());
                    axpy(&mut gx, *c, &go);
                    g[*x] = Some(gx);
                }
                Rec::AddN { xs, out } => {
                    let go = match &g[*out] {
                        Some(v) => v.clone(),
                        None => continue,
                    };
                    for &x in xs {
                        let mut gx = grab(&mut g, x, go.len());
                        axpy(&mut gx, 1.0, &go);
                        g[x] = Some(gx);
                    }
                }
                Rec::ConcatRows { xs, out } => {
                    let go = match &g[*out] {
                        Some(v) => v.clone(),
                        None => continue,
                    };
                    let mut off = 0;
                    for &x in xs {
                        let n = self.nodes[x].len();
                        let mut gx = grab(&mut g, x, n);
                        axpy(&mut gx, 1.0, &go[off..off + n]);
                        g[x] = Some(gx);
                        off += n;
                    }
                }
                Rec::StackCols { xs, out } => {
                    let go = match &g[*out] {
                        Some(v) => v.clone(),
                        None => continue,
                    };
                    let p = self.nodes[xs[0]].len();
                    let n = xs.len();
                    for (c, &x) in xs.iter().enumerate() {
                        let mut gx = grab(&mut g, x, p);
                        for r in 0..p {
                            gx[r] += go[r * n + c];
                        }
                        g[x] = Some(gx);
                    }
                }
                Rec::Column { x, idx, out } => {
                    let go = match &g[*out] {
                        Some(v) => v.clone(),
                        None => continue,
                    };
                    let (r_n, c_n) = (self.nodes[*x].shape()[0], self.nodes[*x].shape()[1]);
                    let mut gx = grab(&mut g, *x, r_n * c_n);
                    for r in 0..r_n {
                        gx[r * c_n + idx] += go[r];
                    }
                    g[*x] = Some(gx);
                }
                Rec::Rows { x, start, len, out } => {
                    let go = match &g[*out] {
                        Some(v) => v.clone(),
                        None => continue,
                    };
                    let cols = self.nodes[*x].cols();
                    let n = self.nodes[*x].len();
                    let mut gx = grab(&mut g, *x, n);
                    axpy(&mut gx[start * cols..(start + len) * cols], 1.0, &go);
                    g[*x] = Some(gx);
                }
                Rec::Blend { zm, zd, delta, out } => {
                    let go = match &g[*out] {
                        Some(v) => v.clone(),
                        None => continue,
                    };
                    let n = go.len();
                    let dv: Vec<f64> = self.nodes[*delta].data().to_vec();
                    let mv: Vec<f64> = self.nodes[*zm].data().to_vec();
                    let zv: Vec<f64> = self.nodes[*zd].data().to_vec();
                    {
                        let mut gm = grab(&mut g, *zm, n);
                        for i in 0..n {
                            gm[i] += go[i] * (1.0 - dv[i]);
                        }
                        g[*zm] = Some(gm);
                    }
                    {
                        let mut gz = grab(&mut g, *zd, n);
                        for i in 0..n {
                            gz[i] += go[i] * dv[i];
                        }
                        g[*zd] = Some(gz);
                    }
                    {
                        let mut gd = grab(&mut g, *delta, n);
                        for i in 0..n {
                            gd[i] += go[i] * (zv[i] - mv[i]);
                        }
                        g[*delta] = Some(gd);
                    }
                }
                Rec::MseLoss { pred, target, out } => {
                    let go = match &g[*out] {
                        Some(v) => v[0],
                        None => continue,
                    };
                    let frames = self.nodes[*pred].frames() as f64;
                    let n = self.nodes[*pred].len();
                    let pv = self.nodes[*pred].data();
                    let tv = self.nodes[*target].data();
                    {
                        let mut gp = grab(&mut g, *pred, n);
                        for i in 0..n {
                            gp[i] += go * 2.0 * (pv[i] - tv[i]) / frames;
                        }
                        g[*pred] = Some(gp);
                    }
                    {
                        let mut gt = grab(&mut g, *target, n);
                        for i in 0..n {
                            gt[i] -= go * 2.0 * (pv[i] - tv[i]) / frames;
                        }
                        g[*target] = Some(gt);
                    }
                }
                Rec::SumAll { x, out } => {
                    let go = match &g[*out] {
                        Some(v) => v[0],
                        None => continue,
                    };
                    let n = self.nodes[*x].len();
                    let mut gx = grab(&mut g, *x, n);
                    for v in gx.iter_mut() {
                        *v += go;
                    }
                    g[*x] = Some(gx);
                }
                Rec::SignFlipProbe { x, out } => {
                    let go = match &g[*out] {
                        Some(v) => v.clone(),
                        None => continue,
                    };
                    let mut gx = grab(&mut g, *x, go.len());
                    axpy(&mut gx, -1.0, &go);
                    g[*x] = Some(gx);
                }
            }
        }
        Ok(Gradients { g })
    }

    /// Add the gradients that reached leased parameter leaves into the
    /// ParamSet's grad buffers.
    pub fn accumulate_param_grads(
        &self,
        grads: &Gradients,
        leases: &ParamLeases,
        params: &mut ParamSet,
        scale: f64,
    ) {
        for id in 0..leases.count {
            if let Some(gv) = grads.get(leases.base + id) {
                let p = params.get_mut(id);
                for (dst, src) in p.grad.data_mut().iter_mut().zip(gv) {
                    *dst += scale * src;
                }
            }
        }
    }
}
