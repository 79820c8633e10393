//! Reverse-mode differentiation over the kernels in [`super::ops`].
//!
//! A [`Tape`] records every value computed during one forward pass together
//! with the operation that produced it. [`Tape::backward`] then walks the
//! records in reverse and accumulates gradients into every node that
//! (transitively) depends on a parameter.

use std::borrow::Cow;

use super::ops::{self, Direction, LstmCache, LstmWeights};
use super::param::ParamId;
use super::tensor::Tensor;
use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Tensor<T>),
    Sigmoid(Var),
    Tanh(Var),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Conv1d {
        input: Var,
        kernels: Var,
        bias: Var,
    },
    MaskedSoftmaxRows(Var),
    Lstm {
        input: Var,
        w_input: Var,
        w_hidden: Var,
        bias: Var,
        direction: Direction,
        cache: LstmCache<T>,
    },
    Pick(Var, Vec<(usize, usize)>),
    BceSum {
        probs: Var,
        targets: Vec<T>,
        floor: T,
    },
}

struct Node<'a, T: Scalar> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records one forward computation. Parameter values are borrowed, not
/// copied, for the lifetime `'a`.
pub struct Tape<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
}

impl<T: Scalar> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], one slot per recorded node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(usize, ParamId)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a recorded value, if any flowed into it.
    pub fn of(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads[var.0].as_ref()
    }

    /// Gradients of every parameter leaf, in recording order. A parameter
    /// recorded more than once contributes one entry per recording.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> + '_ {
        self.params
            .iter()
            .filter_map(|&(node, id)| self.grads[node].as_ref().map(|g| (id, g)))
    }
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant, &[])
    }

    /// A parameter leaf borrowing its current value.
    pub fn param(&mut self, id: ParamId, value: &'a Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Param(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A parameter leaf that is read but not trained.
    pub fn frozen(&mut self, value: &'a Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Constant,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let bt = self.value(b).transpose();
        let v = ops::matmul(self.value(a), &bt)?;
        Ok(self.push(v, Op::MatMulNt(a, b), &[a, b]))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let v = ops::add_bias(self.value(x), self.value(bias))?;
        Ok(self.push(v, Op::AddBias(x, bias), &[x, bias]))
    }

    /// `x · w + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    fn zip_with(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(dim_err(op, format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::from_vec(va.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    /// Elementwise product with a constant (masks, dropout).
    pub fn mul_const(&mut self, a: Var, c: Tensor<T>) -> Result<Var> {
        let va = self.value(a);
        if va.shape() != c.shape() {
            return Err(dim_err(
                "mul_const",
                format!("{:?} vs {:?}", va.shape(), c.shape()),
            ));
        }
        let data = va
            .data()
            .iter()
            .zip(c.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let v = Tensor::from_vec(va.shape(), data)?;
        Ok(self.push(v, Op::MulConst(a, c), &[a]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(T::sigmoid);
        self.push(v, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(T::tanh);
        self.push(v, Op::Tanh(a), &[a])
    }

    /// `value ⊗ σ(gate)`.
    pub fn glu(&mut self, value: Var, gate: Var) -> Result<Var> {
        let s = self.sigmoid(gate);
        self.mul(value, s)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.value(p).rows()).unwrap_or(0);
        if parts
            .iter()
            .any(|&p| self.value(p).rows() != rows || self.value(p).shape().len() != 2)
        {
            return Err(dim_err(
                "concat_cols",
                "all parts must be matrices with equal rows",
            ));
        }
        let width: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(&[rows, width]);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Rows of `table` selected by `indices`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (n, c) = (t.rows(), t.cols());
        let mut out = Tensor::zeros(&[indices.len(), c]);
        for (r, &i) in indices.iter().enumerate() {
            if i >= n {
                return Err(Error::IndexOutOfRange {
                    what: "table rows",
                    index: i,
                    bound: n,
                });
            }
            out.row_mut(r).copy_from_slice(t.row(i));
        }
        Ok(self.push(out, Op::GatherRows(table, indices.to_vec()), &[table]))
    }

    pub fn conv1d_causal(&mut self, input: Var, kernels: Var, bias: Var) -> Result<Var> {
        let v = ops::conv1d_causal(self.value(input), self.value(kernels), self.value(bias))?;
        Ok(self.push(
            v,
            Op::Conv1d {
                input,
                kernels,
                bias,
            },
            &[input, kernels, bias],
        ))
    }

    /// Row-wise masked softmax; `mask` is row-major with the logits' shape.
    pub fn masked_softmax_rows(&mut self, logits: Var, mask: &[bool]) -> Result<Var> {
        let l = self.value(logits);
        if mask.len() != l.len() {
            return Err(dim_err(
                "masked_softmax",
                format!("{} logits, {} mask", l.len(), mask.len()),
            ));
        }
        let c = l.cols();
        let mut out = Tensor::zeros(l.shape());
        for r in 0..l.rows() {
            ops::masked_softmax_into(l.row(r), &mask[r * c..(r + 1) * c], out.row_mut(r));
        }
        Ok(self.push(out, Op::MaskedSoftmaxRows(logits), &[logits]))
    }

    pub fn lstm(
        &mut self,
        input: Var,
        w_input: Var,
        w_hidden: Var,
        bias: Var,
        direction: Direction,
        length: usize,
    ) -> Result<Var> {
        let weights = LstmWeights {
            input: self.value(w_input),
            hidden: self.value(w_hidden),
            bias: self.value(bias),
        };
        let (v, cache) = ops::lstm_forward(self.value(input), weights, direction, length)?;
        let op = Op::Lstm {
            input,
            w_input,
            w_hidden,
            bias,
            direction,
            cache,
        };
        Ok(self.push(v, op, &[input, w_input, w_hidden, bias]))
    }

    /// Column vector of `x[r, c]` for each `(r, c)` in `positions`.
    pub fn pick(&mut self, x: Var, positions: &[(usize, usize)]) -> Result<Var> {
        let t = self.value(x);
        let mut out = Tensor::zeros(&[positions.len(), 1]);
        for (i, &(r, c)) in positions.iter().enumerate() {
            if r >= t.rows() || c >= t.cols() {
                return Err(Error::IndexOutOfRange {
                    what: "pick position",
                    index: r * t.cols() + c,
                    bound: t.len(),
                });
            }
            out.data_mut()[i] = t.get(r, c);
        }
        Ok(self.push(out, Op::Pick(x, positions.to_vec()), &[x]))
    }

    /// Summed binary cross-entropy `−Σ r log p + (1−r) log(1−p)`, with
    /// probabilities clipped to `[floor, 1 − floor]`.
    pub fn bce_sum(&mut self, probs: Var, targets: Vec<T>, floor: T) -> Result<Var> {
        let p = self.value(probs);
        if p.len() != targets.len() {
            return Err(dim_err(
                "bce_sum",
                format!("{} probabilities, {} targets", p.len(), targets.len()),
            ));
        }
        let loss = bce_value(p.data(), &targets, floor);
        let v = Tensor::from_vec(&[1, 1], vec![loss])?;
        Ok(self.push(
            v,
            Op::BceSum {
                probs,
                targets,
                floor,
            },
            &[probs],
        ))
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        let mut params = Vec::new();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if let Op::Param(id) = node.op {
                params.push((idx, id));
                continue;
            }
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        params.reverse();
        Gradients { grads, params }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let out = &self.nodes[idx].value;
        let mut acc = |v: Var, delta: Tensor<T>| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        match &self.nodes[idx].op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (r, k, c) = (va.rows(), va.cols(), vb.cols());
                if self.wants(*a) {
                    let mut ga = Tensor::zeros(&[r, k]);
                    ops::gemm_nt_acc(ga.data_mut(), g.data(), vb.data(), r, k, c);
                    acc(*a, ga);
                }
                if self.wants(*b) {
                    let mut gb = Tensor::zeros(&[k, c]);
                    ops::gemm_tn_acc(gb.data_mut(), va.data(), g.data(), r, k, c);
                    acc(*b, gb);
                }
            }
            Op::MatMulNt(a, b) => {
                // y = a·bᵀ: ga = g·b, gb = gᵀ·a
                let (va, vb) = (self.value(*a), self.value(*b));
                let (r, k, c) = (va.rows(), va.cols(), vb.rows());
                if self.wants(*a) {
                    let mut ga = Tensor::zeros(&[r, k]);
                    ops::gemm_acc(ga.data_mut(), g.data(), vb.data(), r, c, k);
                    acc(*a, ga);
                }
                if self.wants(*b) {
                    let mut gb = Tensor::zeros(&[c, k]);
                    ops::gemm_tn_acc(gb.data_mut(), g.data(), va.data(), r, c, k);
                    acc(*b, gb);
                }
            }
            Op::AddBias(x, b) => {
                if self.wants(*x) {
                    acc(*x, g.clone());
                }
                if self.wants(*b) {
                    let shape = self.value(*b).shape().to_vec();
                    acc(
                        *b,
                        Tensor::from_vec(&shape, ops::column_sums(g)).expect("bias"),
                    );
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        acc(v, g.clone());
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    acc(*a, zip(g, vb, |x, y| x * y));
                }
                if self.wants(*b) {
                    acc(*b, zip(g, va, |x, y| x * y));
                }
            }
            Op::MulConst(a, c) => acc(*a, zip(g, c, |x, y| x * y)),
            Op::Sigmoid(a) => acc(*a, zip(g, out, |gv, s| gv * s * (T::one() - s))),
            Op::Tanh(a) => acc(*a, zip(g, out, |gv, t| gv * (T::one() - t * t))),
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.wants(p) {
                        let mut gp = Tensor::zeros(&[g.rows(), w]);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                        }
                        acc(p, gp);
                    }
                    off += w;
                }
            }
            Op::GatherRows(table, indices) => {
                let mut gt = Tensor::zeros(self.value(*table).shape());
                for (r, &i) in indices.iter().enumerate() {
                    for (o, &v) in gt.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                acc(*table, gt);
            }
            Op::Conv1d {
                input,
                kernels,
                bias,
            } => {
                let (gx, gk, gb) = ops::conv1d_causal_backward(
                    self.value(*input),
                    self.value(*kernels),
                    g,
                    self.wants(*input),
                    self.wants(*kernels),
                );
                if let Some(gx) = gx {
                    acc(*input, gx);
                }
                if let Some(gk) = gk {
                    acc(*kernels, gk);
                }
                if self.wants(*bias) {
                    acc(*bias, gb);
                }
            }
            Op::MaskedSoftmaxRows(logits) => {
                // masked entries have y = 0 and so receive zero gradient
                let mut gl = Tensor::zeros(out.shape());
                for r in 0..out.rows() {
                    let (y, gy) = (out.row(r), g.row(r));
                    let dot: T = y.iter().zip(gy).map(|(&a, &b)| a * b).sum();
                    for ((o, &yv), &gv) in gl.row_mut(r).iter_mut().zip(y).zip(gy) {
                        *o = yv * (gv - dot);
                    }
                }
                acc(*logits, gl);
            }
            Op::Lstm {
                input,
                w_input,
                w_hidden,
                bias,
                direction,
                cache,
            } => {
                let weights = LstmWeights {
                    input: self.value(*w_input),
                    hidden: self.value(*w_hidden),
                    bias: self.value(*bias),
                };
                let lg = ops::lstm_backward(
                    self.value(*input),
                    weights,
                    *direction,
                    out,
                    cache,
                    g,
                    self.wants(*input),
                );
                if let Some(gx) = lg.input {
                    acc(*input, gx);
                }
                if self.wants(*w_input) {
                    acc(*w_input, lg.w_input);
                }
                if self.wants(*w_hidden) {
                    acc(*w_hidden, lg.w_hidden);
                }
                if self.wants(*bias) {
                    acc(*bias, lg.bias);
                }
            }
            Op::Pick(x, positions) => {
                let mut gx = Tensor::zeros(self.value(*x).shape());
                let c = gx.cols();
                for (i, &(r, col)) in positions.iter().enumerate() {
                    gx.data_mut()[r * c + col] += g.data()[i];
                }
                acc(*x, gx);
            }
            Op::BceSum {
                probs,
                targets,
                floor,
            } => {
                let p = self.value(*probs);
                let upstream = g.data()[0];
                let one = T::one();
                let data = p
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&pv, &r)| {
                        if pv < *floor || pv > one - *floor {
                            T::zero()
                        } else {
                            upstream * ((one - r) / (one - pv) - r / pv)
                        }
                    })
                    .collect();
                acc(*probs, Tensor::from_vec(p.shape(), data).expect("bce grad"));
            }
        }
    }
}

fn zip<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_vec(a.shape(), data).expect("same shape")
}

/// `−Σ r log p + (1−r) log(1−p)` with `p` clipped to `[floor, 1 − floor]`.
pub fn bce_value<T: Scalar>(probs: &[T], targets: &[T], floor: T) -> T {
    let one = T::one();
    probs
        .iter()
        .zip(targets)
        .map(|(&p, &r)| {
            let p = p.max(floor).min(one - floor);
            -(r * p.ln() + (one - r) * (one - p).ln())
        })
        .sum()
}
