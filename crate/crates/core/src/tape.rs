//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of one forward pass. Each call returns a
//! [`Var`] handle; nodes are appended in execution order, so the node list is
//! already topologically sorted and [`Tape::backward`] is a single reverse
//! sweep. Parameters are borrowed from a [`ParamStore`] rather than copied;
//! after the backward pass [`Tape::into_param_grads`] releases the borrow and
//! hands the gradients back to the store.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::memory::Buffer;
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Value<S: Scalar> {
    Owned(Tensor<S>),
    Param(ParamId),
}

#[derive(Debug)]
enum Op<S: Scalar> {
    Leaf,
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Embed {
        table: Var,
        ids: Vec<usize>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
        rows: usize,
        d_in: usize,
        d_out: usize,
    },
    PoolMax {
        x: Var,
        argmax: Vec<usize>,
    },
    SoftmaxCe {
        logits: Var,
        target: usize,
        probs: Vec<S>,
    },
    SigmoidBce {
        logits: Var,
        targets: Vec<S>,
    },
    Relu(Var),
    Dropout {
        x: Var,
        scale: Vec<S>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Abs(Var),
    Scale(Var, S),
    Sum(Var),
    Mean(Vec<Var>),
    Concat(Vec<Var>),
    Transpose {
        x: Var,
        rows: usize,
        cols: usize,
    },
    Matmul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    SoftmaxRows {
        x: Var,
        cols: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<S>,
        inv_std: Vec<S>,
    },
    SliceCols {
        x: Var,
        start: usize,
        len: usize,
        cols: usize,
    },
    ConcatCols {
        parts: Vec<Var>,
        rows: usize,
    },
}

#[derive(Debug)]
struct Node<S: Scalar> {
    value: Value<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Whether dropout is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Recording of one forward pass.
pub struct Tape<'p, S: Scalar> {
    params: Option<&'p ParamStore<S>>,
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Buffer<S>>>,
    mode: Mode,
    rng: ChaCha8Rng,
}

impl<S: Scalar> Default for Tape<'_, S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, S: Scalar> Tape<'p, S> {
    /// A tape without parameters, in evaluation mode.
    pub fn new() -> Self {
        Self {
            params: None,
            param_vars: Vec::new(),
            nodes: Vec::new(),
            grads: Vec::new(),
            mode: Mode::Eval,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// A tape that can reference the parameters of `store`.
    pub fn with_params(store: &'p ParamStore<S>) -> Self {
        Self {
            params: Some(store),
            param_vars: vec![None; store.len()],
            ..Self::new()
        }
    }

    /// Switch to training mode; dropout masks are drawn from `seed`.
    pub fn train(mut self, seed: u64) -> Self {
        self.mode = Mode::Train;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::UnknownVar(v.0))
        }
    }

    /// Value of a recorded variable.
    pub fn value(&self, v: Var) -> &Tensor<S> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.expect("param tape").get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn data(&self, v: Var) -> &[S] {
        self.value(v).data()
    }

    fn push(&mut self, out: Tensor<S>, op: Op<S>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value: Value::Owned(out),
            op,
            needs_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Records a constant input (no gradient).
    pub fn input(&mut self, t: Tensor<S>) -> Var {
        let needs_grad = t.requires_grad();
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Leaf,
            needs_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf whose gradient is wanted.
    pub fn leaf(&mut self, t: Tensor<S>) -> Var {
        self.input(t.with_requires_grad(true))
    }

    /// The tape variable for a parameter; repeated calls return the same handle.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
            needs_grad: true,
        });
        self.grads.push(None);
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    // ---------------------------------------------------------------------
    // Operations
    // ---------------------------------------------------------------------

    /// 1-D convolution of `x: [C_in, T]` with `w: [C_out, C_in, k]` and zero
    /// padding `(left, right)`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        dilation: usize,
        pad: (usize, usize),
    ) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        if let Some(b) = b {
            self.check(b)?;
        }
        if dilation < 1 {
            return Err(Error::InvalidArgument("dilation must be at least 1".into()));
        }
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs.len() != 2 || ws.len() != 3 {
            return Err(shape_err(format!(
                "conv1d expects [C,T] and [O,C,k], got {xs:?} and {ws:?}"
            )));
        }
        let (c_in, t_in) = (xs[0], xs[1]);
        let (c_out, wc, k) = (ws[0], ws[1], ws[2]);
        if wc != c_in {
            return Err(shape_err(format!(
                "conv1d input has {c_in} channels, weight expects {wc}"
            )));
        }
        if k < 1 {
            return Err(Error::InvalidArgument(
                "kernel size must be at least 1".into(),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(shape_err(format!(
                    "conv1d bias shape {:?}, expected [{c_out}]",
                    self.shape(b)
                )));
            }
        }
        let geom = ConvGeom {
            c_in,
            c_out,
            k,
            t_in,
            dilation,
            left: pad.0,
            right: pad.1,
        };
        if geom.t_padded() < (k - 1) * dilation + 1 {
            return Err(shape_err(format!(
                "padded length {} shorter than kernel span {}",
                geom.t_padded(),
                (k - 1) * dilation + 1
            )));
        }
        let t_out = geom.t_out();
        let mut out = vec![S::zero(); c_out * t_out];
        kernels::conv1d_forward(
            &geom,
            self.data(x),
            self.data(w),
            b.map(|b| self.data(b)),
            &mut out,
        );
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(
            Tensor::from_parts(vec![c_out, t_out], out),
            Op::Conv1d { x, w, b, geom },
            &inputs,
        ))
    }

    /// Column `t` of the result is row `ids[t]` of `table: [V, E]`; shape `[E, T]`.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.check(table)?;
        let ts = self.shape(table);
        if ts.len() != 2 {
            return Err(shape_err(format!(
                "embedding table must be [V,E], got {ts:?}"
            )));
        }
        let (v, e) = (ts[0], ts[1]);
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(Error::OutOfVocabulary {
                id: bad as i64,
                vocab: v,
            });
        }
        let t = ids.len();
        let tab = self.data(table);
        let mut out = vec![S::zero(); e * t];
        for (ti, &id) in ids.iter().enumerate() {
            for ei in 0..e {
                out[ei * t + ti] = tab[id * e + ei];
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![e, t], out),
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Affine map over the last dimension: `x: [.., D_in]`, `w: [D_out, D_in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w);
        if ws.len() != 2 || xs.is_empty() {
            return Err(shape_err(format!(
                "linear expects weight [O,I], got {ws:?}"
            )));
        }
        let (d_out, d_in) = (ws[0], ws[1]);
        if *xs.last().unwrap() != d_in {
            return Err(shape_err(format!(
                "linear input last dim {} != {d_in}",
                xs.last().unwrap()
            )));
        }
        if let Some(b) = b {
            self.check(b)?;
            if self.shape(b) != [d_out] {
                return Err(shape_err(format!(
                    "linear bias shape {:?}, expected [{d_out}]",
                    self.shape(b)
                )));
            }
        }
        let rows = self.value(x).len() / d_in.max(1);
        let xd = self.data(x);
        let wd = self.data(w);
        let bd = b.map(|b| self.data(b));
        let mut out = vec![S::zero(); rows * d_out];
        for r in 0..rows {
            let xr = &xd[r * d_in..(r + 1) * d_in];
            for o in 0..d_out {
                out[r * d_out + o] = kernels::dot(xr, &wd[o * d_in..(o + 1) * d_in])
                    + bd.map_or(S::zero(), |b| b[o]);
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = d_out;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Linear {
                x,
                w,
                b,
                rows,
                d_in,
                d_out,
            },
            &inputs,
        ))
    }

    /// Per-channel maximum of `x: [C, T]` over `span` (whole axis when `None`).
    /// Ties go to the lowest index.
    pub fn pool_max(&mut self, x: Var, span: Option<(usize, usize)>) -> Result<Var> {
        self.check(x)?;
        let xs = self.shape(x);
        if xs.len() != 2 {
            return Err(shape_err(format!("pool_max expects [C,T], got {xs:?}")));
        }
        let t = xs[1];
        let (start, end) = span.unwrap_or((0, t));
        if end > t || start > end {
            return Err(Error::SpanOutOfBounds { start, end, len: t });
        }
        if start == end {
            return Err(Error::EmptySpan(start));
        }
        self.pool_max_over(x, |i| i >= start && i < end)
    }

    /// Per-channel maximum of `x: [C, T]` over positions where `mask` is true.
    pub fn pool_max_masked(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        self.check(x)?;
        let xs = self.shape(x);
        if xs.len() != 2 || xs[1] != mask.len() {
            return Err(shape_err(format!(
                "mask of length {} for input {xs:?}",
                mask.len()
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::EmptySpan(0));
        }
        self.pool_max_over(x, |i| mask[i])
    }

    fn pool_max_over(&mut self, x: Var, keep: impl Fn(usize) -> bool) -> Result<Var> {
        let (c, t) = (self.shape(x)[0], self.shape(x)[1]);
        let xd = self.data(x);
        let mut out = Vec::with_capacity(c);
        let mut argmax = Vec::with_capacity(c);
        for ci in 0..c {
            let row = &xd[ci * t..(ci + 1) * t];
            let mut best: Option<(usize, S)> = None;
            for (i, &v) in row.iter().enumerate() {
                if !keep(i) {
                    continue;
                }
                match best {
                    Some((_, bv)) if !(v > bv) => {}
                    _ => best = Some((i, v)),
                }
            }
            let (i, v) = best.expect("non-empty pool range");
            out.push(v);
            argmax.push(ci * t + i);
        }
        Ok(self.push(Tensor::vector(out), Op::PoolMax { x, argmax }, &[x]))
    }

    /// `-log softmax(logits)[target]` for a vector of logits.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        self.check(logits)?;
        let z = self.data(logits);
        let k = z.len();
        if self.shape(logits).len() != 1 || k < 2 {
            return Err(shape_err(format!(
                "cross entropy expects a vector of at least 2 logits, got {:?}",
                self.shape(logits)
            )));
        }
        if target >= k {
            return Err(Error::ClassOutOfRange {
                index: target,
                classes: k,
            });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("logits"));
        }
        let m = z.iter().copied().fold(S::neg_infinity(), S::max);
        let exps: Vec<S> = z.iter().map(|&v| (v - m).exp()).collect();
        let total: S = exps.iter().copied().sum();
        let probs: Vec<S> = exps.iter().map(|&e| e / total).collect();
        let loss = total.ln() + m - z[target];
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits,
                target,
                probs,
            },
            &[logits],
        ))
    }

    /// Mean binary cross-entropy of sigmoid(logits) against 0/1 targets of the
    /// same shape.
    pub fn sigmoid_bce(&mut self, logits: Var, targets: &[S]) -> Result<Var> {
        self.check(logits)?;
        let z = self.data(logits);
        if z.len() != targets.len() || z.is_empty() {
            return Err(shape_err(format!(
                "{} logits but {} targets",
                z.len(),
                targets.len()
            )));
        }
        if targets.iter().any(|&y| y != S::zero() && y != S::one()) {
            return Err(Error::NonBinaryTarget);
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("logits"));
        }
        let mut acc = S::zero();
        for (&zi, &yi) in z.iter().zip(targets) {
            acc += zi.max(S::zero()) - zi * yi + (-zi.abs()).exp().ln_1p();
        }
        let loss = acc / S::of(z.len() as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SigmoidBce {
                logits,
                targets: targets.to_vec(),
            },
            &[logits],
        ))
    }

    fn unary(&mut self, x: Var, f: impl Fn(S) -> S, op: Op<S>) -> Result<Var> {
        self.check(x)?;
        let src = self.value(x);
        let out = Tensor::from_parts(
            src.shape().to_vec(),
            src.data().iter().map(|&v| f(v)).collect(),
        );
        Ok(self.push(out, op, &[x]))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(
            x,
            |v| if v > S::zero() { v } else { S::zero() },
            Op::Relu(x),
        )
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v.abs(), Op::Abs(x))
    }

    pub fn scale(&mut self, x: Var, c: S) -> Result<Var> {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    /// Inverted dropout: zero with probability `p`, scale survivors by
    /// `1/(1-p)`. Identity in evaluation mode or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        self.check(x)?;
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "dropout probability {p} not in [0,1)"
            )));
        }
        if self.mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let n = self.value(x).len();
        let keep = S::of(1.0 / (1.0 - p));
        let scale: Vec<S> = (0..n)
            .map(|_| {
                if self.rng.random::<f64>() < p {
                    S::zero()
                } else {
                    keep
                }
            })
            .collect();
        let src = self.value(x);
        let out = Tensor::from_parts(
            src.shape().to_vec(),
            src.data()
                .iter()
                .zip(&scale)
                .map(|(&v, &s)| v * s)
                .collect(),
        );
        Ok(self.push(out, Op::Dropout { x, scale }, &[x]))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(S, S) -> S, op: Op<S>) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!(
                "elementwise op on {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let (ta, tb) = (self.value(a), self.value(b));
        let out = Tensor::from_parts(
            ta.shape().to_vec(),
            ta.data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| f(x, y))
                .collect(),
        );
        Ok(self.push(out, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let s = kernels::sum(self.data(x));
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), &[x]))
    }

    /// Mean of scalar variables.
    pub fn mean(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::InvalidArgument("mean of no values".into()));
        }
        let mut acc = S::zero();
        for &x in xs {
            self.check(x)?;
            acc += self
                .value(x)
                .item()
                .ok_or_else(|| Error::NotScalar(self.shape(x).to_vec()))?;
        }
        let out = acc / S::of(xs.len() as f64);
        Ok(self.push(Tensor::scalar(out), Op::Mean(xs.to_vec()), xs))
    }

    /// Concatenation along the first axis; trailing dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.concat_impl(parts, false)
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        self.concat_impl(parts, true)
    }

    fn concat_impl(&mut self, parts: &[Var], new_axis: bool) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        for &p in parts {
            self.check(p)?;
        }
        let base = self.shape(first).to_vec();
        let mut lead = 0;
        for &p in parts {
            let s = self.shape(p);
            let same = if new_axis {
                s == base.as_slice()
            } else {
                !s.is_empty() && s[1..] == base[1..]
            };
            if !same {
                return Err(shape_err(format!("cannot concat {:?} with {:?}", base, s)));
            }
            lead += if new_axis { 1 } else { s[0] };
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.data(p));
        }
        let shape = if new_axis {
            let mut s = vec![lead];
            s.extend_from_slice(&base);
            s
        } else {
            let mut s = base.clone();
            s[0] = lead;
            s
        };
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Concat(parts.to_vec()),
            parts,
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let xs = self.shape(x);
        if xs.len() != 2 {
            return Err(shape_err(format!("transpose expects rank 2, got {xs:?}")));
        }
        let (rows, cols) = (xs[0], xs[1]);
        let xd = self.data(x);
        let mut out = vec![S::zero(); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = xd[r * cols + c];
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![cols, rows], out),
            Op::Transpose { x, rows, cols },
            &[x],
        ))
    }

    /// `[m, k] x [k, n]` matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err(format!("matmul of {sa:?} and {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![S::zero(); m * n];
        kernels::matmul_acc(self.data(a), self.data(b), &mut out, m, k, n);
        Ok(self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::Matmul { a, b, m, k, n },
            &[a, b],
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let cols = *self
            .shape(x)
            .last()
            .ok_or_else(|| shape_err("softmax of a scalar"))?;
        let src = self.value(x);
        let mut out = src.to_vec();
        for row in out.chunks_mut(cols) {
            let m = row.iter().copied().fold(S::neg_infinity(), S::max);
            let mut total = S::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let shape = src.shape().to_vec();
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::SoftmaxRows { x, cols },
            &[x],
        ))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        self.check(x)?;
        self.check(gamma)?;
        self.check(beta)?;
        let cols = *self
            .shape(x)
            .last()
            .ok_or_else(|| shape_err("layer norm of a scalar"))?;
        if self.shape(gamma) != [cols] || self.shape(beta) != [cols] {
            return Err(shape_err(format!(
                "layer norm affine params must be [{cols}]"
            )));
        }
        let src = self.value(x);
        let rows = src.len() / cols;
        let mut xhat = vec![S::zero(); src.len()];
        let mut inv_std = Vec::with_capacity(rows);
        let n = S::of(cols as f64);
        for r in 0..rows {
            let row = &src.data()[r * cols..(r + 1) * cols];
            let mean = row.iter().copied().sum::<S>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
            let is = S::one() / (var + S::of(eps)).sqrt();
            inv_std.push(is);
            for (h, &v) in xhat[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                *h = (v - mean) * is;
            }
        }
        let g = self.data(gamma);
        let b = self.data(beta);
        let out: Vec<S> = xhat
            .iter()
            .enumerate()
            .map(|(i, &h)| h * g[i % cols] + b[i % cols])
            .collect();
        let shape = src.shape().to_vec();
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    /// Columns `start..start+len` of a rank-2 tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.check(x)?;
        let xs = self.shape(x);
        if xs.len() != 2 || start + len > xs[1] || len == 0 {
            return Err(shape_err(format!("column slice {start}+{len} of {xs:?}")));
        }
        let (rows, cols) = (xs[0], xs[1]);
        let xd = self.data(x);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&xd[r * cols + start..r * cols + start + len]);
        }
        Ok(self.push(
            Tensor::from_parts(vec![rows, len], out),
            Op::SliceCols {
                x,
                start,
                len,
                cols,
            },
            &[x],
        ))
    }

    /// Concatenation of rank-2 tensors along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        for &p in parts {
            self.check(p)?;
        }
        let rows = self.shape(first)[0];
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != rows {
                return Err(shape_err(format!(
                    "cannot column-concat {s:?} with {rows} rows"
                )));
            }
            cols += s[1];
        }
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let c = self.shape(p)[1];
                out.extend_from_slice(&self.data(p)[r * c..(r + 1) * c]);
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![rows, cols], out),
            Op::ConcatCols {
                parts: parts.to_vec(),
                rows,
            },
            parts,
        ))
    }

    // ---------------------------------------------------------------------
    // Backward
    // ---------------------------------------------------------------------

    /// Gradient of the last backward pass(es) with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Clears all accumulated gradients.
    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Reverse sweep from the scalar `loss`. Gradients accumulate across
    /// calls until [`Tape::zero_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check(loss)?;
        if self.value(loss).len() != 1 {
            return Err(Error::NotScalar(self.shape(loss).to_vec()));
        }
        // Per-pass gradient buffers; the seed is d(loss)/d(loss) = 1.
        let mut pass: Vec<Option<Buffer<S>>> = (0..=loss.0).map(|_| None).collect();
        pass[loss.0] = Some(Buffer::from_vec(vec![S::one()]));
        for i in (0..=loss.0).rev() {
            let Some(g) = pass[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut pass);
            let slot = &mut self.grads[i];
            match slot {
                Some(acc) => acc.iter_mut().zip(g.iter()).for_each(|(a, &b)| *a += b),
                None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[S], pass: &mut [Option<Buffer<S>>]) {
        let node = &self.nodes[i];
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        // Accumulates into the per-pass gradient of `v`, allocating zeros first.
        fn slot<'a, S: Scalar>(
            pass: &'a mut [Option<Buffer<S>>],
            v: Var,
            len: usize,
        ) -> &'a mut Buffer<S> {
            pass[v.0].get_or_insert_with(|| Buffer::filled(S::zero(), len))
        }
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d { x, w, b, geom } => {
                let (xd, wd) = (self.data(*x), self.data(*w));
                let mut dx = wants(*x).then(|| {
                    pass[x.0]
                        .take()
                        .unwrap_or_else(|| Buffer::filled(S::zero(), xd.len()))
                });
                let mut dw = wants(*w).then(|| {
                    pass[w.0]
                        .take()
                        .unwrap_or_else(|| Buffer::filled(S::zero(), wd.len()))
                });
                let mut db = b.filter(|b| wants(*b)).map(|b| {
                    pass[b.0]
                        .take()
                        .unwrap_or_else(|| Buffer::filled(S::zero(), geom.c_out))
                });
                kernels::conv1d_backward(
                    geom,
                    xd,
                    wd,
                    g,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    pass[x.0] = Some(dx);
                }
                if let Some(dw) = dw {
                    pass[w.0] = Some(dw);
                }
                if let (Some(db), Some(b)) = (db, b) {
                    pass[b.0] = Some(db);
                }
            }
            Op::Embed { table, ids } => {
                let e = self.shape(*table)[1];
                let n = self.value(*table).len();
                let t = ids.len();
                let dt = slot(pass, *table, n);
                for (ti, &id) in ids.iter().enumerate() {
                    for ei in 0..e {
                        dt[id * e + ei] += g[ei * t + ti];
                    }
                }
            }
            Op::Linear {
                x,
                w,
                b,
                rows,
                d_in,
                d_out,
            } => {
                let (rows, d_in, d_out) = (*rows, *d_in, *d_out);
                if wants(*x) {
                    let wd = self.data(*w);
                    let dx = slot(pass, *x, rows * d_in);
                    for r in 0..rows {
                        let dxr = &mut dx[r * d_in..(r + 1) * d_in];
                        for o in 0..d_out {
                            kernels::axpy(g[r * d_out + o], &wd[o * d_in..(o + 1) * d_in], dxr);
                        }
                    }
                }
                if wants(*w) {
                    let xd = self.data(*x);
                    let dw = slot(pass, *w, d_out * d_in);
                    for r in 0..rows {
                        let xr = &xd[r * d_in..(r + 1) * d_in];
                        for o in 0..d_out {
                            kernels::axpy(g[r * d_out + o], xr, &mut dw[o * d_in..(o + 1) * d_in]);
                        }
                    }
                }
                if let Some(b) = b.filter(|b| wants(*b)) {
                    let db = slot(pass, b, d_out);
                    for r in 0..rows {
                        for o in 0..d_out {
                            db[o] += g[r * d_out + o];
                        }
                    }
                }
            }
            Op::PoolMax { x, argmax } => {
                let n = self.value(*x).len();
                let dx = slot(pass, *x, n);
                for (c, &pos) in argmax.iter().enumerate() {
                    dx[pos] += g[c];
                }
            }
            Op::SoftmaxCe {
                logits,
                target,
                probs,
            } => {
                let dz = slot(pass, *logits, probs.len());
                for (j, &p) in probs.iter().enumerate() {
                    let y = if j == *target { S::one() } else { S::zero() };
                    dz[j] += g[0] * (p - y);
                }
            }
            Op::SigmoidBce { logits, targets } => {
                let z = self.data(*logits);
                let n = S::of(z.len() as f64);
                let dz = slot(pass, *logits, z.len());
                for j in 0..z.len() {
                    let s = S::one() / (S::one() + (-z[j]).exp());
                    dz[j] += g[0] * (s - targets[j]) / n;
                }
            }
            Op::Relu(x) => {
                let out = self.value(Var(i)).data();
                let dx = slot(pass, *x, out.len());
                for j in 0..out.len() {
                    if out[j] > S::zero() {
                        dx[j] += g[j];
                    }
                }
            }
            Op::Dropout { x, scale } => {
                let dx = slot(pass, *x, scale.len());
                for j in 0..scale.len() {
                    dx[j] += g[j] * scale[j];
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if wants(v) {
                        let d = slot(pass, v, g.len());
                        d.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv);
                    }
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    let d = slot(pass, *a, g.len());
                    d.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv);
                }
                if wants(*b) {
                    let d = slot(pass, *b, g.len());
                    d.iter_mut().zip(g).for_each(|(d, &gv)| *d -= gv);
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let bd = self.data(*b);
                    let d = slot(pass, *a, g.len());
                    for j in 0..g.len() {
                        d[j] += g[j] * bd[j];
                    }
                }
                if wants(*b) {
                    let ad = self.data(*a);
                    let d = slot(pass, *b, g.len());
                    for j in 0..g.len() {
                        d[j] += g[j] * ad[j];
                    }
                }
            }
            Op::Abs(x) => {
                let xd = self.data(*x);
                let d = slot(pass, *x, g.len());
                for j in 0..g.len() {
                    if xd[j] > S::zero() {
                        d[j] += g[j];
                    } else if xd[j] < S::zero() {
                        d[j] -= g[j];
                    }
                }
            }
            Op::Scale(x, c) => {
                let d = slot(pass, *x, g.len());
                for j in 0..g.len() {
                    d[j] += g[j] * *c;
                }
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                let d = slot(pass, *x, n);
                d.iter_mut().for_each(|v| *v += g[0]);
            }
            Op::Mean(xs) => {
                let share = g[0] / S::of(xs.len() as f64);
                for &x in xs {
                    if wants(x) {
                        slot(pass, x, 1)[0] += share;
                    }
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if wants(p) {
                        let d = slot(pass, p, n);
                        d.iter_mut()
                            .zip(&g[off..off + n])
                            .for_each(|(d, &gv)| *d += gv);
                    }
                    off += n;
                }
            }
            Op::Transpose { x, rows, cols } => {
                let (rows, cols) = (*rows, *cols);
                let d = slot(pass, *x, rows * cols);
                for r in 0..rows {
                    for c in 0..cols {
                        d[r * cols + c] += g[c * rows + r];
                    }
                }
            }
            Op::Matmul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                if wants(*a) {
                    let bd = self.data(*b);
                    let mut da = pass[a.0]
                        .take()
                        .unwrap_or_else(|| Buffer::filled(S::zero(), m * k));
                    kernels::matmul_nt_acc(g, bd, &mut da, m, n, k);
                    pass[a.0] = Some(da);
                }
                if wants(*b) {
                    let ad = self.data(*a);
                    let mut db = pass[b.0]
                        .take()
                        .unwrap_or_else(|| Buffer::filled(S::zero(), k * n));
                    kernels::matmul_tn_acc(ad, g, &mut db, m, k, n);
                    pass[b.0] = Some(db);
                }
            }
            Op::SoftmaxRows { x, cols } => {
                let y = self.value(Var(i)).data();
                let cols = *cols;
                let d = slot(pass, *x, y.len());
                for r in 0..y.len() / cols {
                    let yr = &y[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let inner = kernels::dot(yr, gr);
                    for j in 0..cols {
                        d[r * cols + j] += yr[j] * (gr[j] - inner);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let cols = self.value(*gamma).len();
                let rows = xhat.len() / cols;
                let gd = self.data(*gamma);
                if wants(*gamma) {
                    let d = slot(pass, *gamma, cols);
                    for j in 0..xhat.len() {
                        d[j % cols] += g[j] * xhat[j];
                    }
                }
                if wants(*beta) {
                    let d = slot(pass, *beta, cols);
                    for j in 0..g.len() {
                        d[j % cols] += g[j];
                    }
                }
                if wants(*x) {
                    let n = S::of(cols as f64);
                    let d = slot(pass, *x, xhat.len());
                    for r in 0..rows {
                        let base = r * cols;
                        let mut mean_dh = S::zero();
                        let mut mean_dh_h = S::zero();
                        for j in 0..cols {
                            let dh = g[base + j] * gd[j];
                            mean_dh += dh;
                            mean_dh_h += dh * xhat[base + j];
                        }
                        mean_dh /= n;
                        mean_dh_h /= n;
                        for j in 0..cols {
                            let dh = g[base + j] * gd[j];
                            d[base + j] += inv_std[r] * (dh - mean_dh - xhat[base + j] * mean_dh_h);
                        }
                    }
                }
            }
            Op::SliceCols {
                x,
                start,
                len,
                cols,
            } => {
                let rows = g.len() / len;
                let d = slot(pass, *x, rows * cols);
                for r in 0..rows {
                    for j in 0..*len {
                        d[r * cols + start + j] += g[r * len + j];
                    }
                }
            }
            Op::ConcatCols { parts, rows } => {
                let total: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
                let mut off = 0;
                for &p in parts {
                    let c = self.shape(p)[1];
                    if wants(p) {
                        let d = slot(pass, p, rows * c);
                        for r in 0..*rows {
                            for j in 0..c {
                                d[r * c + j] += g[r * total + off + j];
                            }
                        }
                    }
                    off += c;
                }
            }
        }
    }

    /// Gradients of every parameter used on this tape, releasing the borrow
    /// of the store.
    pub fn into_param_grads(self) -> Vec<(ParamId, Buffer<S>)> {
        let Tape {
            param_vars,
            mut grads,
            ..
        } = self;
        param_vars
            .iter()
            .enumerate()
            .filter_map(|(pid, v)| {
                let v = (*v)?;
                grads[v.0].take().map(|g| (ParamId(pid), g))
            })
            .collect()
    }
}
