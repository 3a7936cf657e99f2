//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every primitive applied during one forward pass. Nodes
//! are appended in execution order, so walking the node list backwards is a
//! valid reverse topological order. A graph supports a single `backward`; call
//! [`Graph::reset`] (or build a fresh graph) before reusing it.
//!
//! Subgradient conventions: `relu`, `abs`, `sqrt` and `clamp` have derivative 0
//! at their kinks, and `max_last` routes no gradient through a row whose
//! maximum is attained more than once.

use std::sync::Arc;

use super::{NumError, ParamId, ParamStore, Tensor};

/// `c = a * b + beta * c` for row-major `c` of shape `[m, n]`; `a` is `[m, k]` and
/// `b` is `[k, n]`, each addressed through (row, column) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), c: &mut [f64], beta: f64) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    if k == 0 {
        for x in c[..m * n].iter_mut() {
            *x *= beta;
        }
        return;
    }
    debug_assert!(a.len() >= (m - 1) * sa.0 + (k - 1) * sa.1 + 1);
    debug_assert!(b.len() >= (k - 1) * sb.0 + (n - 1) * sb.1 + 1);
    // SAFETY: the asserted lengths cover every element addressed through the strides,
    // and `c` does not alias `a` or `b` (it is a distinct mutable borrow).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Sparse symmetric joint-mixing matrix applied to every frame of a
/// `[frames, joints, channels]` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct JointMixer {
    joints: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl JointMixer {
    /// Builds the mixer from a dense row-major `joints x joints` matrix, keeping non-zeros.
    pub fn from_dense(joints: usize, dense: &[f64]) -> Result<Self, NumError> {
        if dense.len() != joints * joints {
            return Err(NumError::ShapeMismatch(format!(
                "dense mixer of length {} for {} joints",
                dense.len(),
                joints
            )));
        }
        let mut entries = Vec::new();
        for i in 0..joints {
            for j in 0..joints {
                let w = dense[i * joints + j];
                if w != 0.0 {
                    entries.push((i, j, w));
                }
            }
        }
        Ok(Self { joints, entries })
    }

    pub fn joints(&self) -> usize {
        self.joints
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScalarMul(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Sqrt(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    Softmax(Var),
    LogSoftmax(Var),
    MaxLast(Var),
    Pick(Var, Vec<usize>),
    Reshape(Var),
    MeanAxis1(Var),
    JointMix(Var, Arc<JointMixer>),
    TemporalConv(Var, Var),
    PairwiseSqDist(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Record of the primitives applied in one forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
    pool: Pool,
}

/// Recycled buffers. Large tensors are re-allocated on every training step;
/// reusing them avoids returning memory to the OS and faulting it back in.
#[derive(Debug, Default)]
struct Pool {
    free: Vec<Vec<f64>>,
}

impl Pool {
    const MIN_LEN: usize = 4096;
    const MAX_BUFFERS: usize = 512;

    /// Some buffer with capacity for `len` values; contents unspecified.
    fn take(&mut self, len: usize) -> Vec<f64> {
        if len >= Self::MIN_LEN {
            let best = self
                .free
                .iter()
                .enumerate()
                .filter(|(_, b)| b.capacity() >= len)
                .min_by_key(|(_, b)| b.capacity())
                .map(|(i, _)| i);
            if let Some(i) = best {
                return self.free.swap_remove(i);
            }
        }
        Vec::with_capacity(len)
    }

    /// Empty vector with capacity for `len` values.
    fn empty(&mut self, len: usize) -> Vec<f64> {
        let mut buf = self.take(len);
        buf.clear();
        buf
    }

    /// Vector of length `len` holding stale but initialized values, for outputs
    /// that are fully overwritten.
    fn dirty(&mut self, len: usize) -> Vec<f64> {
        let mut buf = self.take(len);
        if buf.len() >= len {
            buf.truncate(len);
        } else {
            buf.resize(len, 0.0);
        }
        buf
    }

    fn zeroed(&mut self, len: usize) -> Vec<f64> {
        let mut buf = self.empty(len);
        buf.resize(len, 0.0);
        buf
    }

    fn give(&mut self, buf: Vec<f64>) {
        if buf.capacity() >= Self::MIN_LEN && self.free.len() < Self::MAX_BUFFERS {
            self.free.push(buf);
        }
    }
}

/// How an operand is broadcast against the output shape (right-aligned).
enum Bcast {
    Same,
    Modulo(usize),
    Map(Vec<usize>),
}

impl Bcast {
    fn new(input: &[usize], out: &[usize]) -> Self {
        if input == out {
            return Bcast::Same;
        }
        let in_len: usize = input.iter().product();
        if out.len() >= input.len() && out[out.len() - input.len()..] == *input {
            return Bcast::Modulo(in_len.max(1));
        }
        let rank = out.len();
        let padded: Vec<usize> = std::iter::repeat_n(1, rank - input.len())
            .chain(input.iter().copied())
            .collect();
        let mut in_strides = vec![0usize; rank];
        let mut acc = 1;
        for d in (0..rank).rev() {
            in_strides[d] = if padded[d] == 1 { 0 } else { acc };
            acc *= padded[d];
        }
        let total: usize = out.iter().product();
        let mut map = Vec::with_capacity(total);
        let mut idx = vec![0usize; rank];
        for _ in 0..total {
            map.push(idx.iter().zip(&in_strides).map(|(i, s)| i * s).sum());
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < out[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Bcast::Map(map)
    }

    #[inline]
    fn at(&self, i: usize) -> usize {
        match self {
            Bcast::Same => i,
            Bcast::Modulo(n) => i % n,
            Bcast::Map(m) => m[i],
        }
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>, NumError> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for d in 0..rank {
        let da = if d + a.len() >= rank { a[d + a.len() - rank] } else { 1 };
        let db = if d + b.len() >= rank { b[d + b.len() - rank] } else { 1 };
        out[d] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(NumError::ShapeMismatch(format!(
                    "cannot broadcast {a:?} with {b:?}"
                )))
            }
        };
    }
    Ok(out)
}

fn last_dim(shape: &[usize]) -> Result<(usize, usize), NumError> {
    match shape.last() {
        Some(&w) if w > 0 => Ok((shape.iter().product::<usize>() / w, w)),
        _ => Err(NumError::ShapeMismatch(format!(
            "last-axis op needs a non-empty trailing axis, got {shape:?}"
        ))),
    }
}

fn softmax_rows(x: &[f64], width: usize, mut out: Vec<f64>) -> Vec<f64> {
    out.clear();
    out.resize(x.len(), 0.0);
    for (src, dst) in x.chunks(width).zip(out.chunks_mut(width)) {
        let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (d, s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            total += *d;
        }
        for d in dst.iter_mut() {
            *d /= total;
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops every recorded node so the graph can be rebuilt.
    pub fn reset(&mut self) {
        for node in self.nodes.drain(..) {
            self.pool.give(node.value.into_values());
        }
        self.consumed = false;
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

    pub fn scalar(&self, v: Var) -> Result<f64, NumError> {
        self.value(v).item()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &str) -> Result<Var, NumError> {
        // Branch-free reduction so the check vectorizes.
        if value.values().iter().fold(false, |bad, x| bad | !x.is_finite()) {
            return Err(NumError::NonFinite(name.to_string()));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn vals(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.values()
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf bound to a learnable parameter; `backward` writes its gradient into the store.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let mut value = store.get(id).clone();
        value.clear_grad();
        self.nodes.push(Node {
            value,
            op: Op::Param(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    fn unary_map(&mut self, a: Var, op: Op, name: &str, f: impl Fn(f64) -> f64) -> Result<Var, NumError> {
        let mut buf = self.pool.empty(self.value(a).len());
        let t = self.value(a);
        buf.extend(t.values().iter().map(|&x| f(x)));
        let out = Tensor::from_parts_unchecked(t.shape().to_vec(), buf);
        let rg = self.rg(a);
        self.push(out, op, rg, name)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Var, NumError> {
        let shape = broadcast_shape(self.shape(a), self.shape(b))?;
        let ba = Bcast::new(self.shape(a), &shape);
        let bb = Bcast::new(self.shape(b), &shape);
        let n: usize = shape.iter().product();
        let mut values = self.pool.empty(n);
        let (va, vb) = (self.vals(a), self.vals(b));
        match (&ba, &bb) {
            (Bcast::Same, Bcast::Same) => values.extend(va.iter().zip(vb).map(|(&x, &y)| f(x, y))),
            (Bcast::Same, Bcast::Modulo(w)) => {
                for row in va.chunks(*w) {
                    values.extend(row.iter().zip(vb).map(|(&x, &y)| f(x, y)));
                }
            }
            _ => values.extend((0..n).map(|i| f(va[ba.at(i)], vb[bb.at(i)]))),
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_parts_unchecked(shape, values), op, rg, name)
    }

    /// `[..., k] x [k, n] -> [..., n]`; leading axes of the left operand act as rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() < 2 || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(NumError::ShapeMismatch(format!("matmul {sa:?} x {sb:?}")));
        }
        let (k, n) = (sb[0], sb[1]);
        let m = sa[..sa.len() - 1].iter().product::<usize>();
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let mut out = self.pool.dirty(m * n);
        let (va, vb) = (self.vals(a), self.vals(b));
        gemm(m, k, n, va, (k, 1), vb, (n, 1), &mut out, 0.0);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_parts_unchecked(shape, out), Op::MatMul(a, b), rg, "matmul")
    }

    /// Elementwise sum with right-aligned broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn scalar_mul(&mut self, a: Var, c: f64) -> Result<Var, NumError> {
        self.unary_map(a, Op::ScalarMul(a, c), "scalar_mul", |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, NumError> {
        self.unary_map(a, Op::AddScalar(a), "add_scalar", |x| x + c)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumError> {
        self.unary_map(a, Op::Relu(a), "relu", |x| x.max(0.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NumError> {
        self.unary_map(a, Op::Sigmoid(a), "sigmoid", sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, NumError> {
        self.unary_map(a, Op::Exp(a), "exp", f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, NumError> {
        if let Some(bad) = self.vals(a).iter().find(|&&x| x <= 0.0) {
            return Err(NumError::Domain(format!("log of non-positive value {bad}")));
        }
        self.unary_map(a, Op::Log(a), "log", f64::ln)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var, NumError> {
        self.unary_map(a, Op::Abs(a), "abs", f64::abs)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var, NumError> {
        if let Some(bad) = self.vals(a).iter().find(|&&x| x < 0.0) {
            return Err(NumError::Domain(format!("sqrt of negative value {bad}")));
        }
        self.unary_map(a, Op::Sqrt(a), "sqrt", f64::sqrt)
    }

    pub fn square(&mut self, a: Var) -> Result<Var, NumError> {
        self.unary_map(a, Op::Square(a), "square", |x| x * x)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var, NumError> {
        if lo > hi {
            return Err(NumError::InvalidArgument(format!("clamp bounds {lo} > {hi}")));
        }
        self.unary_map(a, Op::Clamp(a, lo, hi), "clamp", |x| x.clamp(lo, hi))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var, NumError> {
        let s = self.vals(a).iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::from_parts_unchecked(vec![], vec![s]), Op::Sum(a), rg, "sum")
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var, NumError> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(NumError::ShapeMismatch("mean of empty tensor".into()));
        }
        let s = self.vals(a).iter().sum::<f64>() / n as f64;
        let rg = self.rg(a);
        self.push(Tensor::from_parts_unchecked(vec![], vec![s]), Op::Mean(a), rg, "mean")
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax(&mut self, a: Var) -> Result<Var, NumError> {
        let (_, w) = last_dim(self.shape(a))?;
        let buf = self.pool.empty(self.value(a).len());
        let out = softmax_rows(self.vals(a), w, buf);
        let rg = self.rg(a);
        let shape = self.shape(a).to_vec();
        self.push(Tensor::from_parts_unchecked(shape, out), Op::Softmax(a), rg, "softmax")
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var, NumError> {
        let (_, w) = last_dim(self.shape(a))?;
        let mut out = self.pool.empty(self.value(a).len());
        out.extend_from_slice(self.vals(a));
        for row in out.chunks_mut(w) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        let rg = self.rg(a);
        let shape = self.shape(a).to_vec();
        self.push(Tensor::from_parts_unchecked(shape, out), Op::LogSoftmax(a), rg, "log_softmax")
    }

    /// Maximum over the last axis; the trailing axis is removed.
    pub fn max_last(&mut self, a: Var) -> Result<Var, NumError> {
        let (_, w) = last_dim(self.shape(a))?;
        let out: Vec<f64> = self
            .vals(a)
            .chunks(w)
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let shape = self.shape(a)[..self.shape(a).len() - 1].to_vec();
        let rg = self.rg(a);
        self.push(Tensor::from_parts_unchecked(shape, out), Op::MaxLast(a), rg, "max_last")
    }

    /// `[rows, C] -> [rows]`, selecting column `index[r]` of each row.
    pub fn pick(&mut self, a: Var, index: &[usize]) -> Result<Var, NumError> {
        let (rows, w) = last_dim(self.shape(a))?;
        if index.len() != rows || index.iter().any(|&i| i >= w) {
            return Err(NumError::ShapeMismatch(format!(
                "pick of {} indices from {:?}",
                index.len(),
                self.shape(a)
            )));
        }
        let va = self.vals(a);
        let out = index.iter().enumerate().map(|(r, &c)| va[r * w + c]).collect();
        let rg = self.rg(a);
        self.push(
            Tensor::from_parts_unchecked(vec![rows], out),
            Op::Pick(a, index.to_vec()),
            rg,
            "pick",
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NumError> {
        if shape.iter().product::<usize>() != self.value(a).len() {
            return Err(NumError::ShapeMismatch(format!(
                "reshape {:?} -> {shape:?}",
                self.shape(a)
            )));
        }
        let mut buf = self.pool.empty(self.value(a).len());
        buf.extend_from_slice(self.vals(a));
        let out = Tensor::from_parts_unchecked(shape.to_vec(), buf);
        let rg = self.rg(a);
        self.push(out, Op::Reshape(a), rg, "reshape")
    }

    /// `[a, ..., c] -> [a, c]`, averaging over every axis between the first and the last.
    pub fn mean_axis1(&mut self, a: Var) -> Result<Var, NumError> {
        let s = self.shape(a);
        if s.len() < 3 || s.contains(&0) {
            return Err(NumError::ShapeMismatch(format!("mean_axis1 on {s:?}")));
        }
        let (d0, d2) = (s[0], s[s.len() - 1]);
        let d1 = s[1..s.len() - 1].iter().product::<usize>();
        let mut out = self.pool.zeroed(d0 * d2);
        let va = self.vals(a);
        for i in 0..d0 {
            let dst = &mut out[i * d2..(i + 1) * d2];
            for j in 0..d1 {
                let src = &va[(i * d1 + j) * d2..(i * d1 + j + 1) * d2];
                for (d, x) in dst.iter_mut().zip(src) {
                    *d += x;
                }
            }
            for d in dst.iter_mut() {
                *d /= d1 as f64;
            }
        }
        let rg = self.rg(a);
        self.push(Tensor::from_parts_unchecked(vec![d0, d2], out), Op::MeanAxis1(a), rg, "mean_axis1")
    }

    /// Applies the mixer over the joint axis of a `[..., joints, channels]` tensor.
    pub fn joint_mix(&mut self, a: Var, mixer: &Arc<JointMixer>) -> Result<Var, NumError> {
        let s = self.shape(a).to_vec();
        if s.len() < 2 || s[s.len() - 2] != mixer.joints {
            return Err(NumError::ShapeMismatch(format!(
                "joint_mix with {} joints on {s:?}",
                mixer.joints
            )));
        }
        let (j, c) = (s[s.len() - 2], s[s.len() - 1]);
        let n = s[..s.len() - 2].iter().product::<usize>();
        let mut out = self.pool.zeroed(n * j * c);
        let va = self.vals(a);
        for f in 0..n {
            let base = f * j * c;
            for &(r, col, w) in &mixer.entries {
                let src = &va[base + col * c..base + (col + 1) * c];
                let dst = &mut out[base + r * c..base + (r + 1) * c];
                for (d, x) in dst.iter_mut().zip(src) {
                    *d += w * x;
                }
            }
        }
        let rg = self.rg(a);
        self.push(
            Tensor::from_parts_unchecked(s, out),
            Op::JointMix(a, Arc::clone(mixer)),
            rg,
            "joint_mix",
        )
    }

    /// Zero-padded depthwise convolution along axis 1 of `[batch, frames, joints, channels]`
    /// with kernel `[taps, channels]` (odd `taps`, centred), shared across joints.
    pub fn temporal_conv(&mut self, x: Var, w: Var) -> Result<Var, NumError> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 2 || sw[1] != sx[3] || sw[0] % 2 == 0 {
            return Err(NumError::ShapeMismatch(format!("temporal_conv {sx:?} with kernel {sw:?}")));
        }
        let (b, t, j, c) = (sx[0], sx[1], sx[2], sx[3]);
        let taps = sw[0];
        let half = taps / 2;
        let frame = j * c;
        let mut out = self.pool.zeroed(b * t * frame);
        let (vx, vw) = (self.vals(x), self.vals(w));
        for bi in 0..b {
            for ti in 0..t {
                let dst_off = (bi * t + ti) * frame;
                for k in 0..taps {
                    let src_t = ti as isize + k as isize - half as isize;
                    if src_t < 0 || src_t >= t as isize {
                        continue;
                    }
                    let src_off = (bi * t + src_t as usize) * frame;
                    let wk = &vw[k * c..(k + 1) * c];
                    let dst = &mut out[dst_off..dst_off + frame];
                    let src = &vx[src_off..src_off + frame];
                    for (dj, sj) in dst.chunks_mut(c).zip(src.chunks(c)) {
                        for ((d, s), wv) in dj.iter_mut().zip(sj).zip(wk) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(w);
        self.push(
            Tensor::from_parts_unchecked(sx, out),
            Op::TemporalConv(x, w),
            rg,
            "temporal_conv",
        )
    }

    /// `[n, d] -> [n, n]` matrix of squared Euclidean distances between rows.
    pub fn pairwise_sq_dist(&mut self, a: Var) -> Result<Var, NumError> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(NumError::ShapeMismatch(format!("pairwise_sq_dist on {s:?}")));
        }
        let (n, d) = (s[0], s[1]);
        let va = self.vals(a);
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for k in (i + 1)..n {
                let dist: f64 = va[i * d..(i + 1) * d]
                    .iter()
                    .zip(&va[k * d..(k + 1) * d])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                out[i * n + k] = dist;
                out[k * n + i] = dist;
            }
        }
        let rg = self.rg(a);
        self.push(
            Tensor::from_parts_unchecked(vec![n, n], out),
            Op::PairwiseSqDist(a),
            rg,
            "pairwise_sq_dist",
        )
    }

    /// Populates `grad` on every parameter of `store`: d(loss)/d(param) for parameters
    /// reachable from `loss`, zeros for the rest.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<(), NumError> {
        if self.consumed {
            return Err(NumError::GraphConsumed);
        }
        if self.value(loss).len() != 1 {
            return Err(NumError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let mut param_grads: Vec<Option<Vec<f64>>> = vec![None; store.len()];
        grads[loss.0] = Some(vec![1.0]);

        let mut pool = std::mem::take(&mut self.pool);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if self.nodes[idx].requires_grad {
                if let Err(e) = self.propagate(idx, &g, &mut grads, &mut param_grads, &mut pool) {
                    self.pool = pool;
                    return Err(e);
                }
            }
            pool.give(g);
        }
        self.pool = pool;

        for (i, grad) in param_grads.into_iter().enumerate() {
            let id = ParamId(i);
            let len = store.get(id).len();
            store.get_mut(id).set_grad(grad.unwrap_or_else(|| vec![0.0; len]))?;
        }
        Ok(())
    }

    fn propagate(
        &self,
        idx: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        param_grads: &mut [Option<Vec<f64>>],
        pool: &mut Pool,
    ) -> Result<(), NumError> {
        let out = &self.nodes[idx].value;
        let nodes = &self.nodes;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Param(id) => {
                let slot = param_grads[id.0].get_or_insert_with(|| vec![0.0; g.len()]);
                for (s, x) in slot.iter_mut().zip(g) {
                    *s += x;
                }
            }
            Op::MatMul(a, b) => {
                let sb = self.shape(*b);
                let (k, n) = (sb[0], sb[1]);
                let m = self.value(*a).len() / k;
                let (va, vb) = (self.vals(*a), self.vals(*b));
                if let Some((ga, fresh)) = slot_fresh(nodes, grads, pool, *a) {
                    // dA += G * B^T
                    gemm(m, n, k, g, (n, 1), vb, (1, n), ga, if fresh { 0.0 } else { 1.0 });
                }
                if let Some((gb, fresh)) = slot_fresh(nodes, grads, pool, *b) {
                    // dB += A^T * G
                    gemm(k, m, n, va, (1, k), g, (n, 1), gb, if fresh { 0.0 } else { 1.0 });
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(self.nodes[idx].op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if let Some((ga, fresh)) = slot_fresh(nodes, grads, pool, *a) {
                    let bc = Bcast::new(self.shape(*a), out.shape());
                    reduce_broadcast(ga, fresh, g, &bc, 1.0);
                }
                if let Some((gb, fresh)) = slot_fresh(nodes, grads, pool, *b) {
                    let bc = Bcast::new(self.shape(*b), out.shape());
                    reduce_broadcast(gb, fresh, g, &bc, sign);
                }
            }
            Op::Mul(a, b) => {
                let ba = Bcast::new(self.shape(*a), out.shape());
                let bb = Bcast::new(self.shape(*b), out.shape());
                let (va, vb) = (self.vals(*a), self.vals(*b));
                if let Some(ga) = slot(nodes, grads, pool, *a) {
                    for (i, x) in g.iter().enumerate() {
                        ga[ba.at(i)] += x * vb[bb.at(i)];
                    }
                }
                if let Some(gb) = slot(nodes, grads, pool, *b) {
                    for (i, x) in g.iter().enumerate() {
                        gb[bb.at(i)] += x * va[ba.at(i)];
                    }
                }
            }
            Op::ScalarMul(a, c) => {
                if let Some(ga) = slot(nodes, grads, pool, *a) {
                    for (d, x) in ga.iter_mut().zip(g) {
                        *d += c * x;
                    }
                }
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                if let Some(ga) = slot(nodes, grads, pool, *a) {
                    for (d, x) in ga.iter_mut().zip(g) {
                        *d += x;
                    }
                }
            }
            Op::Relu(a) => {
                let va = self.vals(*a);
                if let Some((ga, fresh)) = slot_fresh(nodes, grads, pool, *a) {
                    for ((d, x), v) in ga.iter_mut().zip(g).zip(va) {
                        let x = if *v > 0.0 { *x } else { 0.0 };
                        *d = if fresh { x } else { *d + x };
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = slot(nodes, grads, pool, *a) {
                    for ((d, x), y) in ga.iter_mut().zip(g).zip(out.values()) {
                        *d += x * y * (1.0 - y);
                    }
                }
            }
            Op::Exp(a) => {
                if let Some(ga) = slot(nodes, grads, pool, *a) {
                    for ((d, x), y) in ga.iter_mut().zip(g).zip(out.values()) {
                        *d += x * y;
                    }
                }
            }
            Op::Log(a) => {
                let va = self.vals(*a);
                if let Some(ga) = slot(nodes, grads, pool, *a) {
                    for ((d, x), v) in ga.iter_mut().zip(g).zip(va) {
                        *d += x / v;
                    }
                }
            }
            Op::Abs(a) => {
                let va = self.vals(*a);
                if let Some(ga) = slot(nodes, grads, pool, *a) {
                    for ((d, x), v) in ga.iter_mut().zip(g).zip(va) {
                        if *v != 0.0 {
                            *d += x * v.signum();
                        }
                    }
                }
            }
            Op::Sqrt(a) => {
                if let Some(ga) = slot(nodes, grads, pool, *a) {
                    for ((d, x), y) in ga.iter_mut().zip(g).zip(out.values()) {
                        if *y > 0.0 {
                            *d += x / (2.0 * y);
                        }
                    }
                }
            }
            Op::Square(a) => {
                let va = self.vals(*a);
                if let Some(ga) = slot(nodes, grads, pool, *a) {
                    for ((d, x), v) in ga.iter_mut().zip(g).zip(va) {
                        *d += 2.0 * x * v;
                    }
                }
            }
            Op::Clamp(a, lo, hi) => {
                let va = self.vals(*a);
                if let Some(ga) = slot(nodes, grads, pool, *a) {
                    for ((d, x), v) in ga.iter_mut().zip(g).zip(va) {
                        if v > lo && v < hi {
                            *d += x;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = slot(nodes, grads, pool, *a) {
                    for d in ga.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::Mean(a) => {
                if let Some(ga) = slot(nodes, grads, pool, *a) {
                    let scale = g[0] / ga.len() as f64;
                    for d in ga.iter_mut() {
                        *d += scale;
                    }
                }
            }
            Op::Softmax(a) => {
                let (_, w) = last_dim(out.shape())?;
                if let Some(ga) = slot(nodes, grads, pool, *a) {
                    for ((dr, gr), yr) in ga.chunks_mut(w).zip(g.chunks(w)).zip(out.values().chunks(w)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                        for ((d, x), y) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += y * (x - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let (_, w) = last_dim(out.shape())?;
                if let Some(ga) = slot(nodes, grads, pool, *a) {
                    for ((dr, gr), yr) in ga.chunks_mut(w).zip(g.chunks(w)).zip(out.values().chunks(w)) {
                        let total: f64 = gr.iter().sum();
                        for ((d, x), y) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += x - y.exp() * total;
                        }
                    }
                }
            }
            Op::MaxLast(a) => {
                let (_, w) = last_dim(self.shape(*a))?;
                let va = self.vals(*a);
                if let Some(ga) = slot(nodes, grads, pool, *a) {
                    for (r, (row, m)) in va.chunks(w).zip(out.values()).enumerate() {
                        let mut hits = row.iter().enumerate().filter(|(_, x)| *x == m);
                        let first = hits.next().map(|(i, _)| i);
                        if let (Some(i), None) = (first, hits.next()) {
                            ga[r * w + i] += g[r];
                        }
                    }
                }
            }
            Op::Pick(a, index) => {
                let (_, w) = last_dim(self.shape(*a))?;
                if let Some(ga) = slot(nodes, grads, pool, *a) {
                    for (r, &c) in index.iter().enumerate() {
                        ga[r * w + c] += g[r];
                    }
                }
            }
            Op::MeanAxis1(a) => {
                let s = self.shape(*a);
                let (d0, d2) = (s[0], s[s.len() - 1]);
                let d1 = s[1..s.len() - 1].iter().product::<usize>();
                if let Some(ga) = slot(nodes, grads, pool, *a) {
                    let inv = 1.0 / d1 as f64;
                    for i in 0..d0 {
                        let src = &g[i * d2..(i + 1) * d2];
                        for j in 0..d1 {
                            let dst = &mut ga[(i * d1 + j) * d2..(i * d1 + j + 1) * d2];
                            for (d, x) in dst.iter_mut().zip(src) {
                                *d += x * inv;
                            }
                        }
                    }
                }
            }
            Op::JointMix(a, mixer) => {
                let s = self.shape(*a);
                let (j, c) = (s[s.len() - 2], s[s.len() - 1]);
                let n = s[..s.len() - 2].iter().product::<usize>();
                if let Some(ga) = slot(nodes, grads, pool, *a) {
                    for f in 0..n {
                        let base = f * j * c;
                        for &(r, col, w) in &mixer.entries {
                            let src = &g[base + r * c..base + (r + 1) * c];
                            let dst = &mut ga[base + col * c..base + (col + 1) * c];
                            for (d, x) in dst.iter_mut().zip(src) {
                                *d += w * x;
                            }
                        }
                    }
                }
            }
            Op::TemporalConv(x, w) => {
                let sx = self.shape(*x).to_vec();
                let (b, t, j, c) = (sx[0], sx[1], sx[2], sx[3]);
                let taps = self.shape(*w)[0];
                let half = taps / 2;
                let frame = j * c;
                let (vx, vw) = (self.vals(*x), self.vals(*w));
                let each = |f: &mut dyn FnMut(usize, usize, usize)| {
                    for bi in 0..b {
                        for ti in 0..t {
                            for k in 0..taps {
                                let src_t = ti as isize + k as isize - half as isize;
                                if src_t < 0 || src_t >= t as isize {
                                    continue;
                                }
                                f((bi * t + ti) * frame, (bi * t + src_t as usize) * frame, k);
                            }
                        }
                    }
                };
                if let Some(gx) = slot(nodes, grads, pool, *x) {
                    each(&mut |dst_off, src_off, k| {
                        let wk = &vw[k * c..(k + 1) * c];
                        let gsrc = &g[dst_off..dst_off + frame];
                        let gdst = &mut gx[src_off..src_off + frame];
                        for (dj, sj) in gdst.chunks_mut(c).zip(gsrc.chunks(c)) {
                            for ((d, s), wv) in dj.iter_mut().zip(sj).zip(wk) {
                                *d += wv * s;
                            }
                        }
                    });
                }
                if let Some(gw) = slot(nodes, grads, pool, *w) {
                    each(&mut |dst_off, src_off, k| {
                        let gk = &mut gw[k * c..(k + 1) * c];
                        let gsrc = &g[dst_off..dst_off + frame];
                        let xsrc = &vx[src_off..src_off + frame];
                        for (gj, xj) in gsrc.chunks(c).zip(xsrc.chunks(c)) {
                            for ((d, gv), xv) in gk.iter_mut().zip(gj).zip(xj) {
                                *d += gv * xv;
                            }
                        }
                    });
                }
            }
            Op::PairwiseSqDist(a) => {
                let s = self.shape(*a).to_vec();
                let (n, d) = (s[0], s[1]);
                let va = self.vals(*a);
                if let Some(ga) = slot(nodes, grads, pool, *a) {
                    for i in 0..n {
                        for k in 0..n {
                            if i == k {
                                continue;
                            }
                            let coeff = 2.0 * (g[i * n + k] + g[k * n + i]);
                            if coeff == 0.0 {
                                continue;
                            }
                            for e in 0..d {
                                ga[i * d + e] += coeff * (va[i * d + e] - va[k * d + e]);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Like [`slot`], but a newly created accumulator holds stale values and is
/// flagged `true`: the caller must overwrite rather than add.
fn slot_fresh<'a>(
    nodes: &[Node],
    grads: &'a mut [Option<Vec<f64>>],
    pool: &mut Pool,
    v: Var,
) -> Option<(&'a mut Vec<f64>, bool)> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let fresh = grads[v.0].is_none();
    let buf = grads[v.0].get_or_insert_with(|| pool.dirty(nodes[v.0].value.len()));
    Some((buf, fresh))
}

/// `acc += sign * g` summed over the broadcast axes of `acc`.
fn reduce_broadcast(acc: &mut [f64], fresh: bool, g: &[f64], bc: &Bcast, sign: f64) {
    match bc {
        Bcast::Same if fresh => {
            for (d, x) in acc.iter_mut().zip(g) {
                *d = sign * x;
            }
        }
        Bcast::Same => {
            for (d, x) in acc.iter_mut().zip(g) {
                *d += sign * x;
            }
        }
        Bcast::Modulo(w) => {
            if fresh {
                acc.fill(0.0);
            }
            for row in g.chunks(*w) {
                for (d, x) in acc.iter_mut().zip(row) {
                    *d += sign * x;
                }
            }
        }
        Bcast::Map(map) => {
            if fresh {
                acc.fill(0.0);
            }
            for (x, &i) in g.iter().zip(map) {
                acc[i] += sign * x;
            }
        }
    }
}

/// Gradient accumulator for an input that needs one; `None` when it does not.
fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], pool: &mut Pool, v: Var) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let len = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| pool.zeroed(len)))
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Plain (non-recorded) softmax of one logit vector, max-subtracted.
pub fn softmax_vec(logits: &[f64]) -> Vec<f64> {
    if logits.is_empty() {
        return Vec::new();
    }
    softmax_rows(logits, logits.len(), Vec::new())
}
