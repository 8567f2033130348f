//! Operation recording for reverse-mode differentiation.
//!
//! A [`Tape`] owns every intermediate value of a forward computation. Each
//! operation appends one node, so node indices are a topological order by
//! construction and [`Tape::backward`] only has to walk them in reverse.
//!
//! Leaves may borrow their tensors (`'a`), which lets a forward pass reference
//! parameter stores without copying them.

use std::borrow::Cow;

use crate::error::{NumError, Result};
use crate::kernels::{self, ConvGeom, Mat};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Identifies a class of recorded operation; used in diagnostics and for
/// deliberately corrupting a gradient rule in negative-control tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    AddBias,
    Add,
    Sub,
    Mul,
    Minimum,
    Neg,
    Scale,
    AddScalar,
    Square,
    Sigmoid,
    Tanh,
    Relu,
    Exp,
    Log,
    Softplus,
    Clamp,
    Sum,
    Mean,
    RowSum,
    Reshape,
    ConcatCols,
    SliceCols,
    IndexRows,
    Bmm,
    TransposeLast2,
    MaskedSoftmax,
    LayerNorm,
    Conv2d,
}

impl OpKind {
    pub fn parse(name: &str) -> Option<OpKind> {
        use OpKind::*;
        let all = [
            Leaf, MatMul, AddBias, Add, Sub, Mul, Minimum, Neg, Scale, AddScalar, Square, Sigmoid,
            Tanh, Relu, Exp, Log, Softplus, Clamp, Sum, Mean, RowSum, Reshape, ConcatCols,
            SliceCols, IndexRows, Bmm, TransposeLast2, MaskedSoftmax, LayerNorm, Conv2d,
        ];
        all.into_iter().find(|k| k.name() == name)
    }

    pub fn name(self) -> &'static str {
        use OpKind::*;
        match self {
            Leaf => "leaf",
            MatMul => "matmul",
            AddBias => "add_bias",
            Add => "add",
            Sub => "sub",
            Mul => "mul",
            Minimum => "minimum",
            Neg => "neg",
            Scale => "scale",
            AddScalar => "add_scalar",
            Square => "square",
            Sigmoid => "sigmoid",
            Tanh => "tanh",
            Relu => "relu",
            Exp => "exp",
            Log => "log",
            Softplus => "softplus",
            Clamp => "clamp",
            Sum => "sum",
            Mean => "mean",
            RowSum => "row_sum",
            Reshape => "reshape",
            ConcatCols => "concat_cols",
            SliceCols => "slice_cols",
            IndexRows => "index_rows",
            Bmm => "bmm",
            TransposeLast2 => "transpose_last2",
            MaskedSoftmax => "masked_softmax",
            LayerNorm => "layer_norm",
            Conv2d => "conv2d",
        }
    }
}

pub(crate) enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Minimum(Var, Var),
    Neg(Var),
    Scale(Var, T),
    AddScalar(Var),
    Square(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Clamp(Var, T, T),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    IndexRows(Var, Vec<Option<usize>>),
    Bmm {
        a: Var,
        b: Var,
        dims: [usize; 4],
    },
    TransposeLast2 {
        x: Var,
        dims: [usize; 3],
    },
    MaskedSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeom,
        batch: usize,
        c_out: usize,
    },
}

impl<T> Op<T> {
    pub(crate) fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::AddBias(..) => OpKind::AddBias,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Minimum(..) => OpKind::Minimum,
            Op::Neg(..) => OpKind::Neg,
            Op::Scale(..) => OpKind::Scale,
            Op::AddScalar(..) => OpKind::AddScalar,
            Op::Square(..) => OpKind::Square,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::Tanh(..) => OpKind::Tanh,
            Op::Relu(..) => OpKind::Relu,
            Op::Exp(..) => OpKind::Exp,
            Op::Log(..) => OpKind::Log,
            Op::Softplus(..) => OpKind::Softplus,
            Op::Clamp(..) => OpKind::Clamp,
            Op::Sum(..) => OpKind::Sum,
            Op::Mean(..) => OpKind::Mean,
            Op::RowSum(..) => OpKind::RowSum,
            Op::Reshape(..) => OpKind::Reshape,
            Op::ConcatCols(..) => OpKind::ConcatCols,
            Op::SliceCols(..) => OpKind::SliceCols,
            Op::IndexRows(..) => OpKind::IndexRows,
            Op::Bmm { .. } => OpKind::Bmm,
            Op::TransposeLast2 { .. } => OpKind::TransposeLast2,
            Op::MaskedSoftmax(..) => OpKind::MaskedSoftmax,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Conv2d { .. } => OpKind::Conv2d,
        }
    }

    pub(crate) fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::AddBias(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Minimum(a, b) => vec![*a, *b],
            Op::Neg(x)
            | Op::Scale(x, _)
            | Op::AddScalar(x)
            | Op::Square(x)
            | Op::Sigmoid(x)
            | Op::Tanh(x)
            | Op::Relu(x)
            | Op::Exp(x)
            | Op::Log(x)
            | Op::Softplus(x)
            | Op::Clamp(x, _, _)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::RowSum(x)
            | Op::Reshape(x)
            | Op::SliceCols(x, _)
            | Op::IndexRows(x, _)
            | Op::MaskedSoftmax(x) => vec![*x],
            Op::TransposeLast2 { x, .. } => vec![*x],
            Op::ConcatCols(xs) => xs.clone(),
            Op::Bmm { a, b, .. } => vec![*a, *b],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Conv2d {
                input, kernel, bias, ..
            } => {
                let mut v = vec![*input, *kernel];
                v.extend(bias);
                v
            }
        }
    }
}

pub(crate) struct Node<'a, T: Scalar> {
    pub value: Cow<'a, Tensor<T>>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

/// Records a forward computation so gradients can be pulled back through it.
///
/// A tape is a single-writer object. Independent tapes may live on different
/// threads at the same time.
pub struct Tape<'a, T: Scalar> {
    pub(crate) nodes: Vec<Node<'a, T>>,
    pub(crate) corrupted: Option<(OpKind, T)>,
}

impl<'a, T: Scalar> Default for Tape<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            corrupted: None,
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Scales every input gradient produced by operations of `kind`.
    ///
    /// Only meant for negative-control tests of gradient checking: any factor
    /// other than one makes the affected rule wrong.
    #[doc(hidden)]
    pub fn corrupt_rule(&mut self, kind: OpKind, factor: T) {
        self.corrupted = Some((kind, factor));
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn op_kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    fn push_leaf(&mut self, value: Cow<'a, Tensor<T>>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(Cow::Owned(value), false)
    }

    /// A constant input borrowed for the life of the tape.
    pub fn constant_ref(&mut self, value: &'a Tensor<T>) -> Var {
        self.push_leaf(Cow::Borrowed(value), false)
    }

    /// A leaf whose gradient is wanted.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(Cow::Owned(value), true)
    }

    /// A borrowed leaf whose gradient is wanted.
    pub fn variable_ref(&mut self, value: &'a Tensor<T>) -> Var {
        self.push_leaf(Cow::Borrowed(value), true)
    }

    /// A constant copy of `v`; gradients do not flow through it.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone().into_owned();
        self.constant(value)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let inputs = op.inputs();
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        debug_assert!(
            !inputs.iter().all(|i| self.nodes[i.0].value.all_finite()) || value.all_finite(),
            "{} produced non-finite values from finite inputs",
            op.kind().name()
        );
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(x).map(f);
        self.push(value, op)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(NumError::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(value, op))
    }

    /// Matrix product of `[m x k]` and `[k x n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(NumError::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        kernels::gemm(
            self.value(a).data(),
            Mat::new(m, k),
            self.value(b).data(),
            Mat::new(k, n),
            &mut out,
            false,
        );
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// Adds a length-`n` vector to every row of an `[.. x n]` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        let n = *sx.last().unwrap_or(&1);
        if sb.iter().product::<usize>() != n || sx.is_empty() {
            return Err(NumError::shape("add_bias", sx, sb));
        }
        let b = self.value(bias).data();
        let mut value = self.value(x).clone();
        for row in value.data_mut().chunks_mut(n) {
            for (v, &bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        Ok(self.push(value, Op::AddBias(x, bias)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("minimum", a, b, |x, y| if x <= y { x } else { y }, Op::Minimum(a, b))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, |v| -v, Op::Neg(x))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        self.unary(x, |v| v * s, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Var {
        self.unary(x, |v| v + s, Op::AddScalar(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.ln(), Op::Log(x))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        self.unary(x, |v| v.max(lo).min(hi), Op::Clamp(x, lo, hi))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::scalar(t.sum() / T::lit(t.len() as f64));
        self.push(value, Op::Mean(x))
    }

    /// Sums the last axis: `[.. x n] -> [.. x 1]`.
    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.rank() == 0 {
            return Err(NumError::invalid("row_sum", "needs rank >= 1"));
        }
        let (_, n) = t.rows_cols();
        let data: Vec<T> = t.data().chunks(n).map(|r| r.iter().copied().sum()).collect();
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = 1;
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::RowSum(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// Concatenates 2D tensors with equal row counts along the columns.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| NumError::invalid("concat_cols", "no inputs"))?;
        let rows = self.shape(first).first().copied().unwrap_or(0);
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            if s.len() != 2 || s[0] != rows {
                return Err(NumError::shape("concat_cols", self.shape(first), s));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&x, &w) in xs.iter().zip(&widths) {
                data.extend_from_slice(&self.value(x).data()[r * w..(r + 1) * w]);
            }
        }
        let value = Tensor::new(vec![rows, total], data)?;
        Ok(self.push(value, Op::ConcatCols(xs.to_vec())))
    }

    /// Columns `start..end` of a 2D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || start > end || end > s[1] {
            return Err(NumError::invalid(
                "slice_cols",
                format!("columns {start}..{end} of shape {s:?}"),
            ));
        }
        let (rows, cols) = (s[0], s[1]);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&src[r * cols + start..r * cols + end]);
        }
        let value = Tensor::new(vec![rows, end - start], data)?;
        Ok(self.push(value, Op::SliceCols(x, start)))
    }

    /// Gathers rows of a 2D tensor; `None` entries produce zero rows.
    pub fn index_rows(&mut self, x: Var, index: &[Option<usize>]) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(NumError::invalid("index_rows", format!("needs 2D input, got {s:?}")));
        }
        let (rows, cols) = (s[0], s[1]);
        if let Some(bad) = index.iter().flatten().find(|&&i| i >= rows) {
            return Err(NumError::invalid("index_rows", format!("row {bad} of {rows}")));
        }
        let src = self.value(x).data();
        let mut data = vec![T::zero(); index.len() * cols];
        for (r, ix) in index.iter().enumerate() {
            if let Some(i) = ix {
                data[r * cols..(r + 1) * cols].copy_from_slice(&src[i * cols..(i + 1) * cols]);
            }
        }
        let value = Tensor::new(vec![index.len(), cols], data)?;
        Ok(self.push(value, Op::IndexRows(x, index.to_vec())))
    }

    /// Batched matrix product `[B x m x k] * [B x k x n] -> [B x m x n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(NumError::shape("bmm", sa, sb));
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![T::zero(); batch * m * n];
        kernels::bmm(self.value(a).data(), self.value(b).data(), &mut out, batch, m, k, n);
        let value = Tensor::new(vec![batch, m, n], out)?;
        Ok(self.push(
            value,
            Op::Bmm {
                a,
                b,
                dims: [batch, m, k, n],
            },
        ))
    }

    /// Swaps the last two axes of a rank-3 tensor.
    pub fn transpose_last2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 3 {
            return Err(NumError::invalid("transpose_last2", format!("needs rank 3, got {s:?}")));
        }
        let (batch, r, c) = (s[0], s[1], s[2]);
        let data = kernels::transpose_last2(self.value(x).data(), batch, r, c);
        let value = Tensor::new(vec![batch, c, r], data)?;
        Ok(self.push(
            value,
            Op::TransposeLast2 {
                x,
                dims: [batch, r, c],
            },
        ))
    }

    /// Softmax over the last axis with an additive mask.
    ///
    /// `mask` has one entry per element of `x`, or one per column to be
    /// shared by every row. Entries equal to negative infinity mark absent
    /// positions, which get probability exactly zero; finite entries are
    /// added to the logits. Fails if a row has no present entry.
    pub fn masked_softmax(&mut self, x: Var, mask: &[T]) -> Result<Var> {
        self.masked_softmax_impl(x, mask, false)
    }

    /// Like [`Tape::masked_softmax`], but a fully masked row yields all zeros
    /// (and a zero gradient) instead of an error.
    pub fn masked_softmax_or_zero(&mut self, x: Var, mask: &[T]) -> Result<Var> {
        self.masked_softmax_impl(x, mask, true)
    }

    fn masked_softmax_impl(&mut self, x: Var, mask: &[T], allow_empty: bool) -> Result<Var> {
        let t = self.value(x);
        if t.rank() == 0 {
            return Err(NumError::invalid("masked_softmax", "needs rank >= 1"));
        }
        let (rows, n) = t.rows_cols();
        let per_row = if mask.len() == t.len() {
            false
        } else if mask.len() == n {
            true
        } else {
            return Err(NumError::shape("masked_softmax", t.shape(), &[mask.len()]));
        };
        let mut out = vec![T::zero(); t.len()];
        for r in 0..rows {
            let logits = &t.data()[r * n..(r + 1) * n];
            let m = if per_row { mask } else { &mask[r * n..(r + 1) * n] };
            let present = |j: usize| m[j] != T::neg_infinity();
            let mut max = T::neg_infinity();
            let mut any = false;
            for j in (0..n).filter(|&j| present(j)) {
                max = max.max(logits[j] + m[j]);
                any = true;
            }
            if !any {
                if allow_empty {
                    continue;
                }
                return Err(NumError::AllMasked { row: r });
            }
            let o = &mut out[r * n..(r + 1) * n];
            let mut total = T::zero();
            for j in (0..n).filter(|&j| present(j)) {
                let e = (logits[j] + m[j] - max).exp();
                o[j] = e;
                total += e;
            }
            for j in (0..n).filter(|&j| present(j)) {
                o[j] /= total;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(value, Op::MaskedSoftmax(x)))
    }

    /// Layer normalisation over the last axis with 1/d variance.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let t = self.value(x);
        let (rows, d) = t.rows_cols();
        if t.rank() == 0 || d < 2 {
            return Err(NumError::invalid("layer_norm", format!("needs d >= 2, shape {:?}", t.shape())));
        }
        for p in [gain, bias] {
            if self.value(p).len() != d {
                return Err(NumError::shape("layer_norm", t.shape(), self.shape(p)));
            }
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let dn = T::lit(d as f64);
        let mut xhat = vec![T::zero(); t.len()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); t.len()];
        for r in 0..rows {
            let row = &t.data()[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let xh = (row[j] - mean) * is;
                xhat[r * d + j] = xh;
                out[r * d + j] = g[j] * xh + b[j];
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Unpadded 2D cross-correlation.
    ///
    /// `input` is `[C_in x H x W]` or `[B x C_in x H x W]`, `kernel` is
    /// `[C_out x C_in x k x k]` and the optional `bias` has `C_out` entries.
    /// The output keeps the input's rank with `H' = (H - k) / stride + 1`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, stride: usize) -> Result<Var> {
        let si = self.shape(input).to_vec();
        let sk = self.shape(kernel).to_vec();
        let (batch, c_in, h, w) = match si.as_slice() {
            [c, h, w] => (1, *c, *h, *w),
            [b, c, h, w] => (*b, *c, *h, *w),
            _ => return Err(NumError::shape("conv2d", &si, &sk)),
        };
        if sk.len() != 4 || sk[1] != c_in || sk[2] != sk[3] {
            return Err(NumError::shape("conv2d", &si, &sk));
        }
        let (c_out, k) = (sk[0], sk[2]);
        let geom = ConvGeom::new(c_in, h, w, k, stride).ok_or_else(|| NumError::shape("conv2d", &si, &sk))?;
        if let Some(b) = bias {
            if self.value(b).len() != c_out {
                return Err(NumError::shape("conv2d", &sk, self.shape(b)));
            }
        }
        let np = geom.out_pixels();
        let kdata = self.value(kernel).data();
        let idata = self.value(input).data();
        let mut cols = vec![T::zero(); geom.patch_len() * np];
        let mut out = vec![T::zero(); batch * c_out * np];
        for bi in 0..batch {
            kernels::im2col(&idata[bi * c_in * h * w..(bi + 1) * c_in * h * w], &geom, &mut cols);
            kernels::gemm(
                kdata,
                Mat::new(c_out, geom.patch_len()),
                &cols,
                Mat::new(geom.patch_len(), np),
                &mut out[bi * c_out * np..(bi + 1) * c_out * np],
                false,
            );
        }
        if let Some(b) = bias {
            let bd = self.value(b).data();
            for (ch, plane) in out.chunks_mut(np).enumerate() {
                let bv = bd[ch % c_out];
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
        let shape = if si.len() == 3 {
            vec![c_out, geom.h_out, geom.w_out]
        } else {
            vec![batch, c_out, geom.h_out, geom.w_out]
        };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                batch,
                c_out,
            },
        ))
    }
}
