use crate::error::{dim_err, Error, Result};
use crate::rng::Rng;
use crate::tensor::{col2im, conv_output_size, im2col, matmul_into, numel, permute_data, Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How batch normalization picks its statistics.
#[derive(Clone, Debug)]
pub enum NormStats<'a, S: Scalar> {
    /// Normalize by the statistics of the current batch.
    Batch,
    /// Normalize by stored running statistics.
    Running { mean: &'a [S], var: &'a [S] },
}

#[derive(Debug)]
pub(crate) enum Op<S: Scalar> {
    Leaf,
    Matmul(Var, Var),
    BatchMatmul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBroadcast(Var, Var),
    Scale(Var, S),
    MulConst(Var, Vec<S>),
    Relu(Var),
    Gelu(Var),
    Sum(Var),
    Mean(Var),
    MeanAxis { x: Var, axis: usize },
    Reshape(Var),
    Permute { x: Var, perm: Vec<usize> },
    Concat { parts: Vec<Var>, axis: usize },
    Softmax { x: Var, axis: usize },
    LogSoftmax { x: Var, axis: usize },
    Gather { x: Var, index: Vec<usize> },
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize, cols: Vec<S> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<S>, inv_std: Vec<S>, batch_stats: bool },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<S>, inv_std: Vec<S> },
}

impl<S: Scalar> Op<S> {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Matmul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | AddBroadcast(a, b) => vec![*a, *b],
            BatchMatmul { a, b, .. } => vec![*a, *b],
            Scale(x, _) | MulConst(x, _) | Relu(x) | Gelu(x) | Sum(x) | Mean(x) | Reshape(x) => vec![*x],
            MeanAxis { x, .. } | Permute { x, .. } | Softmax { x, .. } | LogSoftmax { x, .. } => vec![*x],
            Gather { x, .. } => vec![*x],
            Concat { parts, .. } => parts.clone(),
            Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            BatchNorm { x, gamma, beta, .. } | LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        }
    }

    pub(crate) fn name(&self) -> &'static str {
        use Op::*;
        match self {
            Leaf => "leaf",
            Matmul(..) => "matmul",
            BatchMatmul { .. } => "batch_matmul",
            Add(..) => "add",
            Sub(..) => "sub",
            Mul(..) => "mul",
            AddBroadcast(..) => "add_broadcast",
            Scale(..) => "scale",
            MulConst(..) => "mul_const",
            Relu(..) => "relu",
            Gelu(..) => "gelu",
            Sum(..) => "sum",
            Mean(..) => "mean",
            MeanAxis { .. } => "mean_axis",
            Reshape(..) => "reshape",
            Permute { .. } => "permute",
            Concat { .. } => "concat",
            Softmax { .. } => "softmax",
            LogSoftmax { .. } => "log_softmax",
            Gather { .. } => "gather",
            Conv2d { .. } => "conv2d",
            BatchNorm { .. } => "batch_norm",
            LayerNorm { .. } => "layer_norm",
        }
    }
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Record of differentiable operations for reverse-mode gradients.
///
/// Nodes are appended in execution order, so the node list is already a topological
/// order. [`Tape::backward`] walks it in reverse and accumulates gradients: a value used
/// by several ops receives the sum of their contributions.
pub struct Tape<S: Scalar = f32> {
    nodes: Vec<Node<S>>,
    backward_done: bool,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// `[outer, k, inner]` split of a shape around `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu<S: Scalar>(x: S) -> S {
    let c = S::from_f64_lossy(GELU_C);
    let a = S::from_f64_lossy(GELU_A);
    let half = S::from_f64_lossy(0.5);
    half * x * (S::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<S: Scalar>(x: S) -> S {
    let c = S::from_f64_lossy(GELU_C);
    let a = S::from_f64_lossy(GELU_A);
    let half = S::from_f64_lossy(0.5);
    let three = S::from_f64_lossy(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (S::one() + t) + half * x * (S::one() - t * t) * c * (S::one() + three * a * x * x)
}

/// Inverted-dropout mask: each entry is `0` with probability `p`, else `1/(1-p)`.
pub fn dropout_mask<S: Scalar>(len: usize, p: f64, rng: &mut Rng) -> Result<Vec<S>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
    }
    let keep = S::from_f64_lossy(1.0 / (1.0 - p));
    Ok((0..len)
        .map(|_| if rng.uniform() < p { S::zero() } else { keep })
        .collect())
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> Var {
        let needs_grad = match &op {
            Op::Leaf => value.requires_grad(),
            other => other.inputs().iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_data(&mut self, shape: Vec<usize>, data: Vec<S>, op: Op<S>) -> Var {
        let value = Tensor::new(shape, data).expect("op produced a consistent shape");
        self.push(value, op)
    }

    /// Records a leaf; gradients are kept iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.push(t.with_requires_grad(false), Op::Leaf)
    }

    /// Leaf that receives a gradient.
    pub fn variable(&mut self, t: Tensor<S>) -> Var {
        self.push(t.with_requires_grad(true), Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.nodes[v.0].value.grad()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    fn data(&self, v: Var) -> &[S] {
        self.nodes[v.0].value.data()
    }

    // ---- linear algebra -------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        crate::tensor::check_matmul(&sa, &sb)?;
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![S::zero(); m * n];
        matmul_into(m, k, n, self.data(a), false, self.data(b), false, &mut out);
        Ok(self.push_data(vec![m, n], out, Op::Matmul(a, b)))
    }

    /// Batched product of `[B,m,k]` and `[B,k,n]`, or of `[B,m,k]` and `[B,n,k]ᵀ` when
    /// `trans_b` is set.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ok = sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0];
        let (bk, n) = if trans_b { (sb.get(2), sb.get(1)) } else { (sb.get(1), sb.get(2)) };
        if !ok || bk != Some(&sa[2]) {
            return Err(dim_err!(
                "batch_matmul needs [B,m,k]x[B,k,n] (trans_b={trans_b}), got {sa:?} x {sb:?}"
            ));
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], *n.unwrap());
        let mut out = vec![S::zero(); batch * m * n];
        let (da, db) = (self.data(a), self.data(b));
        for i in 0..batch {
            matmul_into(
                m,
                k,
                n,
                &da[i * m * k..(i + 1) * m * k],
                false,
                &db[i * k * n..(i + 1) * k * n],
                trans_b,
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        Ok(self.push_data(vec![batch, m, n], out, Op::BatchMatmul { a, b, trans_b }))
    }

    // ---- elementwise ------------------------------------------------------------

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err!("{op}: shapes {:?} and {:?} differ", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(S, S) -> S) -> (Vec<usize>, Vec<S>) {
        let out = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        (self.shape(a).to_vec(), out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (shape, out) = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push_data(shape, out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let (shape, out) = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push_data(shape, out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (shape, out) = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push_data(shape, out, Op::Mul(a, b)))
    }

    /// `a + b` where `b`'s shape equals the trailing dimensions of `a` (bias rows,
    /// positional tables).
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(dim_err!("add_broadcast: {sb:?} is not a suffix of {sa:?}"));
        }
        let shape = sa.to_vec();
        let bd = self.data(b).to_vec();
        let m = bd.len();
        let out = self.data(a).iter().enumerate().map(|(i, &x)| x + bd[i % m]).collect();
        Ok(self.push_data(shape, out, Op::AddBroadcast(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: S) -> Var {
        let out = self.data(x).iter().map(|&v| v * c).collect();
        self.push_data(self.shape(x).to_vec(), out, Op::Scale(x, c))
    }

    /// Elementwise product with a constant of identical length.
    pub fn mul_const(&mut self, x: Var, c: Vec<S>) -> Result<Var> {
        if c.len() != self.value(x).len() {
            return Err(dim_err!(
                "mul_const: {} constants for tensor of shape {:?}",
                c.len(),
                self.shape(x)
            ));
        }
        let out = self.data(x).iter().zip(&c).map(|(&v, &k)| v * k).collect();
        Ok(self.push_data(self.shape(x).to_vec(), out, Op::MulConst(x, c)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.data(x).iter().map(|&v| if v > S::zero() { v } else { S::zero() }).collect();
        self.push_data(self.shape(x).to_vec(), out, Op::Relu(x))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.data(x).iter().map(|&v| gelu(v)).collect();
        self.push_data(self.shape(x).to_vec(), out, Op::Gelu(x))
    }

    /// Inverted dropout. Returns `x` unchanged when not training or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, training: bool, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let mask = dropout_mask(self.value(x).len(), p, rng)?;
        self.mul_const(x, mask)
    }

    // ---- reductions and layout ----------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s: S = self.data(x).iter().copied().sum();
        self.push_data(vec![1], vec![s], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let s: S = d.iter().copied().sum::<S>() / S::from_usize(d.len()).unwrap();
        self.push_data(vec![1], vec![s], Op::Mean(x))
    }

    fn check_axis(&self, x: Var, axis: usize) -> Result<()> {
        if axis >= self.shape(x).len() {
            return Err(dim_err!("axis {axis} out of range for shape {:?}", self.shape(x)));
        }
        Ok(())
    }

    /// Mean over one axis; the axis is removed from the shape (rank-1 inputs give `[1]`).
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis)?;
        let shape = self.shape(x).to_vec();
        let (outer, k, inner) = axis_split(&shape, axis);
        let d = self.data(x);
        let inv = S::one() / S::from_usize(k).unwrap();
        let mut out = vec![S::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..k {
                let row = &d[(o * k + j) * inner..(o * k + j + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let mut oshape: Vec<usize> = shape.clone();
        oshape.remove(axis);
        if oshape.is_empty() {
            oshape.push(1);
        }
        Ok(self.push_data(oshape, out, Op::MeanAxis { x, axis }))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        if numel(&shape) != self.value(x).len() || shape.contains(&0) {
            return Err(dim_err!("cannot reshape {:?} into {shape:?}", self.shape(x)));
        }
        let data = self.data(x).to_vec();
        Ok(self.push_data(shape, data, Op::Reshape(x)))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let rank = self.shape(x).len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(dim_err!("invalid permutation {perm:?} for shape {:?}", self.shape(x)));
        }
        let (data, shape) = permute_data(self.data(x), self.shape(x), perm);
        Ok(self.push_data(shape, data, Op::Permute { x, perm: perm.to_vec() }))
    }

    /// Swaps two axes.
    pub fn transpose(&mut self, x: Var, a0: usize, a1: usize) -> Result<Var> {
        self.check_axis(x, a0)?;
        self.check_axis(x, a1)?;
        let mut perm: Vec<usize> = (0..self.shape(x).len()).collect();
        perm.swap(a0, a1);
        self.permute(x, &perm)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| dim_err!("concat of zero tensors"))?;
        self.check_axis(first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(dim_err!("concat along axis {axis}: {base:?} vs {s:?}"));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let k = self.shape(p)[axis];
                out.extend_from_slice(&self.data(p)[o * k * inner..(o + 1) * k * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push_data(shape, out, Op::Concat { parts: parts.to_vec(), axis }))
    }

    // ---- probability -------------------------------------------------------------

    fn softmax_data(&self, x: Var, axis: usize, log: bool) -> Vec<S> {
        let (outer, k, inner) = axis_split(self.shape(x), axis);
        let d = self.data(x);
        let mut out = vec![S::zero(); d.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * k + j) * inner + i;
                let max = (0..k).map(|j| d[at(j)]).fold(S::neg_infinity(), S::max);
                let mut z = S::zero();
                for j in 0..k {
                    z += (d[at(j)] - max).exp();
                }
                let lz = z.ln();
                for j in 0..k {
                    let shifted = d[at(j)] - max;
                    out[at(j)] = if log { shifted - lz } else { shifted.exp() / z };
                }
            }
        }
        out
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis)?;
        let out = self.softmax_data(x, axis, false);
        Ok(self.push_data(self.shape(x).to_vec(), out, Op::Softmax { x, axis }))
    }

    /// Log-softmax along `axis` via log-sum-exp.
    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis)?;
        let out = self.softmax_data(x, axis, true);
        Ok(self.push_data(self.shape(x).to_vec(), out, Op::LogSoftmax { x, axis }))
    }

    /// Picks `x[i, index[i]]` from an `[N,K]` tensor, giving `[N]`.
    pub fn gather(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || s[0] != index.len() {
            return Err(dim_err!("gather of {} indices from shape {s:?}", index.len()));
        }
        let k = s[1];
        if let Some((i, &bad)) = index.iter().enumerate().find(|(_, &c)| c >= k) {
            return Err(Error::Input(format!("index {bad} at row {i} out of range [0,{k})")));
        }
        let d = self.data(x);
        let out = index.iter().enumerate().map(|(i, &c)| d[i * k + c]).collect();
        Ok(self.push_data(vec![index.len()], out, Op::Gather { x, index: index.to_vec() }))
    }

    // ---- convolution and normalization ---------------------------------------------

    /// 2-D cross-correlation with zero padding: `[N,C,H,W] ⋆ [F,C,kh,kw] (+ bias[F])`.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(dim_err!("conv2d needs [N,C,H,W] and [F,C,kh,kw], got {sx:?} and {sw:?}"));
        }
        let (n, c, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (f, kh, kw) = (sw[0], sw[2], sw[3]);
        let (ho, wo) = match (conv_output_size(h, kh, stride, pad), conv_output_size(wd, kw, stride, pad)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(dim_err!(
                    "conv2d kernel {kh}x{kw} (stride {stride}) does not fit input {h}x{wd} padded by {pad}"
                ))
            }
        };
        if let Some(b) = bias {
            if self.shape(b) != [f] {
                return Err(dim_err!("conv2d bias shape {:?}, expected [{f}]", self.shape(b)));
            }
        }
        let cols = im2col(self.data(x), n, c, h, wd, kh, kw, stride, pad, ho, wo);
        let ckk = c * kh * kw;
        let p = n * ho * wo;
        let mut y = vec![S::zero(); f * p];
        matmul_into(f, ckk, p, self.data(w), false, &cols, false, &mut y);
        if let Some(b) = bias {
            let bd = self.data(b);
            for (fi, row) in y.chunks_mut(p).enumerate() {
                row.iter_mut().for_each(|v| *v += bd[fi]);
            }
        }
        let (out, _) = permute_data(&y, &[f, n, ho * wo], &[1, 0, 2]);
        let keep_cols = if self.nodes[w.0].needs_grad { cols } else { Vec::new() };
        Ok(self.push_data(
            vec![n, f, ho, wo],
            out,
            Op::Conv2d { x, w, b: bias, stride, pad, cols: keep_cols },
        ))
    }

    /// Per-channel batch normalization of `[N,C,H,W]` (or `[N,C]`) with affine
    /// parameters `gamma`, `beta` of shape `[C]`.
    ///
    /// Returns the output and, for [`NormStats::Batch`], the batch mean and biased
    /// variance per channel so the caller can update running statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: NormStats<'_, S>,
        eps: f64,
    ) -> Result<(Var, Option<(Vec<S>, Vec<S>)>)> {
        let sx = self.shape(x).to_vec();
        if sx.len() < 2 {
            return Err(dim_err!("batch_norm needs at least [N,C], got {sx:?}"));
        }
        let (n, c) = (sx[0], sx[1]);
        let spatial = numel(&sx[2..]);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(dim_err!("batch_norm affine params must be [{c}]"));
        }
        let count = n * spatial;
        let d = self.data(x);
        let eps = S::from_f64_lossy(eps);
        let (mean, var, batch_stats) = match stats {
            NormStats::Batch => {
                if count < 2 {
                    return Err(Error::Contract(
                        "batch_norm with batch statistics needs more than one value per channel".into(),
                    ));
                }
                let mut mean = vec![S::zero(); c];
                let mut var = vec![S::zero(); c];
                let inv = S::one() / S::from_usize(count).unwrap();
                for b in 0..n {
                    for ch in 0..c {
                        let s: S = d[(b * c + ch) * spatial..(b * c + ch + 1) * spatial].iter().copied().sum();
                        mean[ch] += s;
                    }
                }
                mean.iter_mut().for_each(|m| *m *= inv);
                for b in 0..n {
                    for ch in 0..c {
                        let m = mean[ch];
                        let s: S = d[(b * c + ch) * spatial..(b * c + ch + 1) * spatial]
                            .iter()
                            .map(|&v| (v - m) * (v - m))
                            .sum();
                        var[ch] += s;
                    }
                }
                var.iter_mut().for_each(|v| *v *= inv);
                (mean, var, true)
            }
            NormStats::Running { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(dim_err!("running statistics must have {c} channels"));
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
        let (g, bt) = (self.data(gamma), self.data(beta));
        let mut xhat = vec![S::zero(); d.len()];
        let mut out = vec![S::zero(); d.len()];
        for b in 0..n {
            for ch in 0..c {
                let r = (b * c + ch) * spatial..(b * c + ch + 1) * spatial;
                for i in r {
                    let xh = (d[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = g[ch] * xh + bt[ch];
                }
            }
        }
        let node = self.push_data(
            sx,
            out,
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats },
        );
        Ok((node, batch_stats.then_some((mean, var))))
    }

    /// Layer normalization over the last axis with affine `[D]` parameters.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let dim = *sx.last().unwrap();
        if self.shape(gamma) != [dim] || self.shape(beta) != [dim] {
            return Err(dim_err!("layer_norm affine params must be [{dim}]"));
        }
        let d = self.data(x);
        let rows = d.len() / dim;
        let eps = S::from_f64_lossy(eps);
        let inv_d = S::one() / S::from_usize(dim).unwrap();
        let (g, bt) = (self.data(gamma), self.data(beta));
        let mut xhat = vec![S::zero(); d.len()];
        let mut out = vec![S::zero(); d.len()];
        let mut inv_std = vec![S::zero(); rows];
        for r in 0..rows {
            let row = &d[r * dim..(r + 1) * dim];
            let mean = row.iter().copied().sum::<S>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() * inv_d;
            let is = S::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..dim {
                let xh = (row[j] - mean) * is;
                xhat[r * dim + j] = xh;
                out[r * dim + j] = g[j] * xh + bt[j];
            }
        }
        Ok(self.push_data(sx, out, Op::LayerNorm { x, gamma, beta, xhat, inv_std }))
    }

    // ---- reverse pass -------------------------------------------------------------

    /// Accumulates `d loss / d leaf` into every leaf that requires a gradient.
    ///
    /// The loss must hold a single element. A tape supports one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract("backward already ran on this tape".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![S::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[idx].op {
                self.nodes[idx].value.accumulate_grad(&g)?;
                continue;
            }
            for (input, contribution) in self.local_grads(idx, &g) {
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Vector-Jacobian products of node `idx` for upstream gradient `g`.
    fn local_grads(&self, idx: usize, g: &[S]) -> Vec<(Var, Vec<S>)> {
        let node = &self.nodes[idx];
        let out_val = node.value.data();
        let mut res = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.wants(*a) {
                    let mut ga = vec![S::zero(); m * k];
                    matmul_into(m, n, k, g, false, self.data(*b), true, &mut ga);
                    res.push((*a, ga));
                }
                if self.wants(*b) {
                    let mut gb = vec![S::zero(); k * n];
                    matmul_into(k, m, n, self.data(*a), true, g, false, &mut gb);
                    res.push((*b, gb));
                }
            }
            Op::BatchMatmul { a, b, trans_b } => {
                let sa = self.shape(*a);
                let (batch, m, k) = (sa[0], sa[1], sa[2]);
                let n = node.value.shape()[2];
                let (da, db) = (self.data(*a), self.data(*b));
                if self.wants(*a) {
                    let mut ga = vec![S::zero(); batch * m * k];
                    for i in 0..batch {
                        // G·Bᵀ where B is [k,n]; with trans_b the stored [n,k] is used as-is.
                        matmul_into(
                            m,
                            n,
                            k,
                            &g[i * m * n..(i + 1) * m * n],
                            false,
                            &db[i * k * n..(i + 1) * k * n],
                            !trans_b,
                            &mut ga[i * m * k..(i + 1) * m * k],
                        );
                    }
                    res.push((*a, ga));
                }
                if self.wants(*b) {
                    let mut gb = vec![S::zero(); batch * k * n];
                    for i in 0..batch {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let ai = &da[i * m * k..(i + 1) * m * k];
                        let out = &mut gb[i * k * n..(i + 1) * k * n];
                        if *trans_b {
                            matmul_into(n, m, k, gi, true, ai, false, out);
                        } else {
                            matmul_into(k, m, n, ai, true, gi, false, out);
                        }
                    }
                    res.push((*b, gb));
                }
            }
            Op::Add(a, b) => {
                res.push((*a, g.to_vec()));
                res.push((*b, g.to_vec()));
            }
            Op::Sub(a, b) => {
                res.push((*a, g.to_vec()));
                res.push((*b, g.iter().map(|&v| -v).collect()));
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                res.push((*a, g.iter().zip(db).map(|(&gi, &bi)| gi * bi).collect()));
                res.push((*b, g.iter().zip(da).map(|(&gi, &ai)| gi * ai).collect()));
            }
            Op::AddBroadcast(a, b) => {
                res.push((*a, g.to_vec()));
                if self.wants(*b) {
                    let m = self.value(*b).len();
                    let mut gb = vec![S::zero(); m];
                    for chunk in g.chunks(m) {
                        gb.iter_mut().zip(chunk).for_each(|(acc, &v)| *acc += v);
                    }
                    res.push((*b, gb));
                }
            }
            Op::Scale(x, c) => res.push((*x, g.iter().map(|&v| v * *c).collect())),
            Op::MulConst(x, c) => res.push((*x, g.iter().zip(c).map(|(&v, &k)| v * k).collect())),
            Op::Relu(x) => {
                let d = self.data(*x);
                res.push((*x, g.iter().zip(d).map(|(&gi, &xi)| if xi > S::zero() { gi } else { S::zero() }).collect()));
            }
            Op::Gelu(x) => {
                let d = self.data(*x);
                res.push((*x, g.iter().zip(d).map(|(&gi, &xi)| gi * gelu_grad(xi)).collect()));
            }
            Op::Sum(x) => res.push((*x, vec![g[0]; self.value(*x).len()])),
            Op::Mean(x) => {
                let n = self.value(*x).len();
                res.push((*x, vec![g[0] / S::from_usize(n).unwrap(); n]));
            }
            Op::MeanAxis { x, axis } => {
                let (outer, k, inner) = axis_split(self.shape(*x), *axis);
                let inv = S::one() / S::from_usize(k).unwrap();
                let mut gx = vec![S::zero(); outer * k * inner];
                for o in 0..outer {
                    for j in 0..k {
                        for i in 0..inner {
                            gx[(o * k + j) * inner + i] = g[o * inner + i] * inv;
                        }
                    }
                }
                res.push((*x, gx));
            }
            Op::Reshape(x) => res.push((*x, g.to_vec())),
            Op::Permute { x, perm } => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                let (gx, _) = permute_data(g, node.value.shape(), &inverse);
                res.push((*x, gx));
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = axis_split(node.value.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let k = self.shape(p)[*axis];
                    let mut gp = Vec::with_capacity(outer * k * inner);
                    for o in 0..outer {
                        let start = (o * total + offset) * inner;
                        gp.extend_from_slice(&g[start..start + k * inner]);
                    }
                    offset += k;
                    res.push((p, gp));
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, k, inner) = axis_split(node.value.shape(), *axis);
                let mut gx = vec![S::zero(); g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * k + j) * inner + i;
                        let dot: S = (0..k).map(|j| g[at(j)] * out_val[at(j)]).sum();
                        for j in 0..k {
                            gx[at(j)] = out_val[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
                res.push((*x, gx));
            }
            Op::LogSoftmax { x, axis } => {
                let (outer, k, inner) = axis_split(node.value.shape(), *axis);
                let mut gx = vec![S::zero(); g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * k + j) * inner + i;
                        let total: S = (0..k).map(|j| g[at(j)]).sum();
                        for j in 0..k {
                            gx[at(j)] = g[at(j)] - out_val[at(j)].exp() * total;
                        }
                    }
                }
                res.push((*x, gx));
            }
            Op::Gather { x, index } => {
                let k = self.shape(*x)[1];
                let mut gx = vec![S::zero(); index.len() * k];
                for (i, &c) in index.iter().enumerate() {
                    gx[i * k + c] = g[i];
                }
                res.push((*x, gx));
            }
            Op::Conv2d { x, w, b, stride, pad, cols } => {
                let sx = self.shape(*x);
                let sw = self.shape(*w);
                let (n, c, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
                let (f, kh, kw) = (sw[0], sw[2], sw[3]);
                let (ho, wo) = (node.value.shape()[2], node.value.shape()[3]);
                let p = n * ho * wo;
                let ckk = c * kh * kw;
                let (gy, _) = permute_data(g, &[n, f, ho * wo], &[1, 0, 2]);
                if self.wants(*x) {
                    let mut gcols = vec![S::zero(); ckk * p];
                    matmul_into(ckk, f, p, self.data(*w), true, &gy, false, &mut gcols);
                    res.push((*x, col2im(&gcols, n, c, h, wd, kh, kw, *stride, *pad, ho, wo)));
                }
                if self.wants(*w) {
                    let mut gw = vec![S::zero(); f * ckk];
                    matmul_into(f, p, ckk, &gy, false, cols, true, &mut gw);
                    res.push((*w, gw));
                }
                if let Some(b) = b {
                    let gb = gy.chunks(p).map(|row| row.iter().copied().sum()).collect();
                    res.push((*b, gb));
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
                let sx = self.shape(*x);
                let (n, c) = (sx[0], sx[1]);
                let spatial = numel(&sx[2..]);
                let gam = self.data(*gamma);
                let mut sum_g = vec![S::zero(); c];
                let mut sum_gx = vec![S::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        for i in (b * c + ch) * spatial..(b * c + ch + 1) * spatial {
                            sum_g[ch] += g[i];
                            sum_gx[ch] += g[i] * xhat[i];
                        }
                    }
                }
                if self.wants(*x) {
                    let m = S::from_usize(n * spatial).unwrap();
                    let mut gx = vec![S::zero(); g.len()];
                    for b in 0..n {
                        for ch in 0..c {
                            let k = gam[ch] * inv_std[ch];
                            for i in (b * c + ch) * spatial..(b * c + ch + 1) * spatial {
                                gx[i] = if *batch_stats {
                                    k * (g[i] - sum_g[ch] / m - xhat[i] * sum_gx[ch] / m)
                                } else {
                                    k * g[i]
                                };
                            }
                        }
                    }
                    res.push((*x, gx));
                }
                res.push((*gamma, sum_gx));
                res.push((*beta, sum_g));
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let dim = *self.shape(*x).last().unwrap();
                let gam = self.data(*gamma);
                let mut ggam = vec![S::zero(); dim];
                let mut gbeta = vec![S::zero(); dim];
                let mut gx = vec![S::zero(); g.len()];
                let dn = S::from_usize(dim).unwrap();
                for (r, &is) in inv_std.iter().enumerate() {
                    let span = r * dim..(r + 1) * dim;
                    let mut s1 = S::zero();
                    let mut s2 = S::zero();
                    for (j, i) in span.clone().enumerate() {
                        ggam[j] += g[i] * xhat[i];
                        gbeta[j] += g[i];
                        let dxh = g[i] * gam[j];
                        s1 += dxh;
                        s2 += dxh * xhat[i];
                    }
                    for (j, i) in span.enumerate() {
                        let dxh = g[i] * gam[j];
                        gx[i] = is * (dxh - s1 / dn - xhat[i] * s2 / dn);
                    }
                }
                res.push((*x, gx));
                res.push((*gamma, ggam));
                res.push((*beta, gbeta));
            }
        }
        res
    }
}
