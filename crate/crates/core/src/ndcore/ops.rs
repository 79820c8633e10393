//! Forward and backward kernels for the operations the models are built from.
//!
//! Every kernel works on row-major slices; the tape in [`super::tape`] wires
//! them together for reverse-mode differentiation.

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;

/// `out[r×c] += a[r×k] · b[k×c]`.
///
/// Zero entries of `a` are skipped, which makes one-hot inputs cheap.
pub(crate) fn gemm_acc<T: Scalar>(out: &mut [T], a: &[T], b: &[T], r: usize, k: usize, c: usize) {
    debug_assert_eq!(out.len(), r * c);
    debug_assert_eq!(a.len(), r * k);
    debug_assert_eq!(b.len(), k * c);
    for i in 0..r {
        let out_row = &mut out[i * c..(i + 1) * c];
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &aik) in a_row.iter().enumerate() {
            if aik == T::zero() {
                continue;
            }
            let b_row = &b[kk * c..(kk + 1) * c];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
}

/// `out[k×c] += aᵀ · g` for `a: r×k`, `g: r×c`.
pub(crate) fn gemm_tn_acc<T: Scalar>(
    out: &mut [T],
    a: &[T],
    g: &[T],
    r: usize,
    k: usize,
    c: usize,
) {
    debug_assert_eq!(out.len(), k * c);
    for i in 0..r {
        let g_row = &g[i * c..(i + 1) * c];
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == T::zero() {
                continue;
            }
            let out_row = &mut out[kk * c..(kk + 1) * c];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += aik * gv;
            }
        }
    }
}

/// `out[r×k] += g · bᵀ` for `g: r×c`, `b: k×c`.
pub(crate) fn gemm_nt_acc<T: Scalar>(
    out: &mut [T],
    g: &[T],
    b: &[T],
    r: usize,
    k: usize,
    c: usize,
) {
    let mut bt = vec![T::zero(); c * k];
    for kk in 0..k {
        for j in 0..c {
            bt[j * k + kk] = b[kk * c + j];
        }
    }
    gemm_acc(out, g, &bt, r, c, k);
}

fn expect_matrix<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(dim_err(
            op,
            format!("expected a matrix, got shape {:?}", t.shape()),
        ));
    }
    Ok((t.rows(), t.cols()))
}

/// Matrix product `a · b`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, k) = expect_matrix("matmul", a)?;
    let (k2, c) = expect_matrix("matmul", b)?;
    if k != k2 {
        return Err(dim_err("matmul", format!("{r}×{k} · {k2}×{c}")));
    }
    let mut out = Tensor::zeros(&[r, c]);
    gemm_acc(out.data_mut(), a.data(), b.data(), r, k, c);
    Ok(out)
}

/// Adds a length-`c` bias to every row of an `r × c` matrix.
pub fn add_bias<T: Scalar>(x: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, c) = expect_matrix("add_bias", x)?;
    if bias.len() != c {
        return Err(dim_err(
            "add_bias",
            format!("{c} columns, bias of {}", bias.len()),
        ));
    }
    let mut out = x.clone();
    for i in 0..r {
        for (o, &b) in out.row_mut(i).iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    Ok(out)
}

/// Column sums of an `r × c` matrix (the gradient of a row-broadcast bias).
pub(crate) fn column_sums<T: Scalar>(g: &Tensor<T>) -> Vec<T> {
    let c = g.cols();
    let mut out = vec![T::zero(); c];
    for i in 0..g.rows() {
        for (o, &v) in out.iter_mut().zip(g.row(i)) {
            *o += v;
        }
    }
    out
}

/// Gated linear unit: `value ⊗ σ(gate)`.
pub fn glu<T: Scalar>(value: &Tensor<T>, gate: &Tensor<T>) -> Result<Tensor<T>> {
    if value.shape() != gate.shape() {
        return Err(dim_err(
            "glu",
            format!("{:?} vs {:?}", value.shape(), gate.shape()),
        ));
    }
    let data = value
        .data()
        .iter()
        .zip(gate.data())
        .map(|(&v, &g)| v * g.sigmoid())
        .collect();
    Tensor::from_vec(value.shape(), data)
}

fn check_conv<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(usize, usize, usize, usize)> {
    let (k, c_in) = expect_matrix("conv1d_causal", input)?;
    let ks = kernels.shape();
    if ks.len() != 3 || ks[0] == 0 {
        return Err(dim_err(
            "conv1d_causal",
            format!("kernels must be width × in × out, got {ks:?}"),
        ));
    }
    if ks[1] != c_in {
        return Err(dim_err(
            "conv1d_causal",
            format!("input has {c_in} channels, kernels expect {}", ks[1]),
        ));
    }
    if bias.len() != ks[2] {
        return Err(dim_err(
            "conv1d_causal",
            format!("{} output channels, bias of {}", ks[2], bias.len()),
        ));
    }
    Ok((k, c_in, ks[0], ks[2]))
}

/// Causal 1-D convolution over time.
///
/// Output row `t` reads input rows `t-w+1 ..= t` (rows before 0 are zero);
/// tap `d` of the kernel multiplies input row `t - (w-1) + d`.
pub fn conv1d_causal<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (k, c_in, w, c_out) = check_conv(input, kernels, bias)?;
    let mut out = Tensor::zeros(&[k, c_out]);
    for i in 0..k {
        out.row_mut(i).copy_from_slice(bias.data());
    }
    let tap = c_in * c_out;
    for d in 0..w {
        let shift = w - 1 - d;
        if shift >= k {
            continue;
        }
        let rows = k - shift;
        gemm_acc(
            &mut out.data_mut()[shift * c_out..],
            &input.data()[..rows * c_in],
            &kernels.data()[d * tap..(d + 1) * tap],
            rows,
            c_in,
            c_out,
        );
    }
    Ok(out)
}

/// Gradients of [`conv1d_causal`] with respect to input, kernels and bias.
pub(crate) fn conv1d_causal_backward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    grad_out: &Tensor<T>,
    want_input: bool,
    want_kernels: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>, Tensor<T>) {
    let (k, c_in) = (input.rows(), input.cols());
    let ks = kernels.shape();
    let (w, c_out) = (ks[0], ks[2]);
    let tap = c_in * c_out;
    let mut gx = want_input.then(|| Tensor::zeros(&[k, c_in]));
    let mut gk = want_kernels.then(|| Tensor::zeros(ks));
    for d in 0..w {
        let shift = w - 1 - d;
        if shift >= k {
            continue;
        }
        let rows = k - shift;
        let g = &grad_out.data()[shift * c_out..];
        if let Some(gx) = gx.as_mut() {
            gemm_nt_acc(
                &mut gx.data_mut()[..rows * c_in],
                g,
                &kernels.data()[d * tap..(d + 1) * tap],
                rows,
                c_in,
                c_out,
            );
        }
        if let Some(gk) = gk.as_mut() {
            gemm_tn_acc(
                &mut gk.data_mut()[d * tap..(d + 1) * tap],
                &input.data()[..rows * c_in],
                g,
                rows,
                c_in,
                c_out,
            );
        }
    }
    let gb = Tensor::from_vec(&[c_out], column_sums(grad_out)).expect("bias shape");
    (gx, gk, gb)
}

/// Softmax over the unmasked entries of `logits`; masked entries get 0.
///
/// A fully masked row yields all zeros.
pub fn masked_softmax<T: Scalar>(logits: &[T], mask: &[bool]) -> Vec<T> {
    let mut out = vec![T::zero(); logits.len()];
    masked_softmax_into(logits, mask, &mut out);
    out
}

pub(crate) fn masked_softmax_into<T: Scalar>(logits: &[T], mask: &[bool], out: &mut [T]) {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(None, |acc: Option<T>, l| Some(acc.map_or(l, |a| a.max(l))));
    let Some(max) = max else {
        out.iter_mut().for_each(|o| *o = T::zero());
        return;
    };
    let mut total = T::zero();
    for ((o, &l), &m) in out.iter_mut().zip(logits).zip(mask) {
        *o = if m { (l - max).exp() } else { T::zero() };
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Gate weights of one LSTM direction; gate blocks ordered input, forget,
/// output, candidate along the `4g` axis.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights<'a, T> {
    /// `D × 4g`
    pub input: &'a Tensor<T>,
    /// `g × 4g`
    pub hidden: &'a Tensor<T>,
    /// `4g`
    pub bias: &'a Tensor<T>,
}

impl<T: Scalar> LstmWeights<'_, T> {
    pub fn hidden_size(&self) -> usize {
        self.hidden.rows()
    }

    fn check(&self, input_width: usize) -> Result<usize> {
        let g = self.hidden.rows();
        let ok = self.input.shape() == [input_width, 4 * g]
            && self.hidden.shape() == [g, 4 * g]
            && self.bias.len() == 4 * g;
        if !ok {
            return Err(dim_err(
                "lstm_sequence",
                format!(
                    "input width {input_width}: W_x {:?}, W_h {:?}, b {:?}",
                    self.input.shape(),
                    self.hidden.shape(),
                    self.bias.shape()
                ),
            ));
        }
        Ok(g)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    /// Positions `0..length` in processing order.
    pub fn order(self, length: usize) -> Box<dyn Iterator<Item = usize>> {
        match self {
            Direction::Forward => Box::new(0..length),
            Direction::Backward => Box::new((0..length).rev()),
        }
    }
}

/// Per-step activations kept for backpropagation through time.
#[derive(Clone, Debug)]
pub(crate) struct LstmCache<T> {
    /// `length × 4g`: post-activation gates (i, f, o, candidate).
    gates: Vec<T>,
    /// `length × g` cell states.
    cells: Vec<T>,
    length: usize,
    hidden: usize,
}

/// Runs one LSTM direction over the first `length` rows of `inputs`.
///
/// Initial hidden and cell states are zero. The backward direction walks
/// `length-1 ..= 0` and writes each hidden state to its own row; rows at or
/// beyond `length` are zero.
pub fn lstm_sequence<T: Scalar>(
    inputs: &Tensor<T>,
    weights: LstmWeights<'_, T>,
    direction: Direction,
    length: usize,
) -> Result<Tensor<T>> {
    lstm_forward(inputs, weights, direction, length).map(|(h, _)| h)
}

pub(crate) fn lstm_forward<T: Scalar>(
    inputs: &Tensor<T>,
    weights: LstmWeights<'_, T>,
    direction: Direction,
    length: usize,
) -> Result<(Tensor<T>, LstmCache<T>)> {
    let (k, d) = expect_matrix("lstm_sequence", inputs)?;
    let g = weights.check(d)?;
    if length > k {
        return Err(dim_err(
            "lstm_sequence",
            format!("length {length} exceeds {k} rows"),
        ));
    }
    let g4 = 4 * g;
    let mut z = vec![T::zero(); length * g4];
    for t in 0..length {
        z[t * g4..(t + 1) * g4].copy_from_slice(weights.bias.data());
    }
    gemm_acc(
        &mut z,
        &inputs.data()[..length * d],
        weights.input.data(),
        length,
        d,
        g4,
    );

    let mut out = Tensor::zeros(&[k, g]);
    let mut cells = vec![T::zero(); length * g];
    let mut h_prev = vec![T::zero(); g];
    let mut c_prev = vec![T::zero(); g];
    for t in direction.order(length) {
        let zt = &mut z[t * g4..(t + 1) * g4];
        gemm_acc(zt, &h_prev, weights.hidden.data(), 1, g, g4);
        for j in 0..g {
            let i_g = zt[j].sigmoid();
            let f_g = zt[g + j].sigmoid();
            let o_g = zt[2 * g + j].sigmoid();
            let cand = zt[3 * g + j].tanh();
            zt[j] = i_g;
            zt[g + j] = f_g;
            zt[2 * g + j] = o_g;
            zt[3 * g + j] = cand;
            let c = f_g * c_prev[j] + i_g * cand;
            cells[t * g + j] = c;
            h_prev[j] = o_g * c.tanh();
        }
        c_prev.copy_from_slice(&cells[t * g..(t + 1) * g]);
        out.row_mut(t).copy_from_slice(&h_prev);
    }
    let cache = LstmCache {
        gates: z,
        cells,
        length,
        hidden: g,
    };
    Ok((out, cache))
}

pub(crate) struct LstmGrads<T> {
    pub input: Option<Tensor<T>>,
    pub w_input: Tensor<T>,
    pub w_hidden: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Backpropagation through time for [`lstm_forward`].
pub(crate) fn lstm_backward<T: Scalar>(
    inputs: &Tensor<T>,
    weights: LstmWeights<'_, T>,
    direction: Direction,
    output: &Tensor<T>,
    cache: &LstmCache<T>,
    grad_out: &Tensor<T>,
    want_input: bool,
) -> LstmGrads<T> {
    let (k, d) = (inputs.rows(), inputs.cols());
    let (g, length) = (cache.hidden, cache.length);
    let g4 = 4 * g;
    let mut dz = vec![T::zero(); length * g4];
    let mut w_hidden = Tensor::zeros(&[g, g4]);
    let mut dh_next = vec![T::zero(); g];
    let mut dc_next = vec![T::zero(); g];
    let zero_state = vec![T::zero(); g];
    let one = T::one();

    let order: Vec<usize> = direction.order(length).collect();
    for (pos, &t) in order.iter().enumerate().rev() {
        let prev = pos.checked_sub(1).map(|p| order[p]);
        let c_prev = prev.map_or(&zero_state[..], |p| &cache.cells[p * g..(p + 1) * g]);
        let h_prev = prev.map_or(&zero_state[..], |p| output.row(p));
        let gates = &cache.gates[t * g4..(t + 1) * g4];
        let dzt = &mut dz[t * g4..(t + 1) * g4];
        let gh = grad_out.row(t);
        for j in 0..g {
            let (i_g, f_g, o_g, cand) =
                (gates[j], gates[g + j], gates[2 * g + j], gates[3 * g + j]);
            let c = cache.cells[t * g + j];
            let tc = c.tanh();
            let dh = gh[j] + dh_next[j];
            let dc = dh * o_g * (one - tc * tc) + dc_next[j];
            dzt[j] = dc * cand * i_g * (one - i_g);
            dzt[g + j] = dc * c_prev[j] * f_g * (one - f_g);
            dzt[2 * g + j] = dh * tc * o_g * (one - o_g);
            dzt[3 * g + j] = dc * i_g * (one - cand * cand);
            dc_next[j] = dc * f_g;
        }
        dh_next.iter_mut().for_each(|v| *v = T::zero());
        gemm_nt_acc(&mut dh_next, dzt, weights.hidden.data(), 1, g, g4);
        gemm_tn_acc(w_hidden.data_mut(), h_prev, dzt, 1, g, g4);
    }

    let mut w_input = Tensor::zeros(&[d, g4]);
    gemm_tn_acc(
        w_input.data_mut(),
        &inputs.data()[..length * d],
        &dz,
        length,
        d,
        g4,
    );
    let dz_t = Tensor::from_vec(&[length, g4], dz).expect("dz shape");
    let bias = Tensor::from_vec(&[g4], column_sums(&dz_t)).expect("bias shape");
    let input = want_input.then(|| {
        let mut gx = Tensor::zeros(&[k, d]);
        gemm_nt_acc(
            &mut gx.data_mut()[..length * d],
            dz_t.data(),
            weights.input.data(),
            length,
            d,
            g4,
        );
        gx
    });
    LstmGrads {
        input,
        w_input,
        w_hidden,
        bias,
    }
}

/// Inverted-dropout keep mask: each entry is `1/keep` with probability
/// `keep`, otherwise 0.
pub fn dropout_mask<T: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    keep_probability: f64,
    rng: &mut R,
) -> Result<Tensor<T>> {
    if !(keep_probability > 0.0 && keep_probability <= 1.0) {
        return Err(Error::Config(format!(
            "keep probability must lie in (0, 1], got {keep_probability}"
        )));
    }
    let scale = T::lit(1.0 / keep_probability);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            if keep_probability >= 1.0 || rng.random::<f64>() < keep_probability {
                scale
            } else {
                T::zero()
            }
        })
        .collect();
    Tensor::from_vec(shape, data)
}

/// Inverted dropout. In evaluation mode (or with `keep_probability == 1`)
/// the input is returned unchanged.
pub fn dropout<T: Scalar, R: Rng + ?Sized>(
    input: &Tensor<T>,
    keep_probability: f64,
    training: bool,
    rng: &mut R,
) -> Result<Tensor<T>> {
    if !(keep_probability > 0.0 && keep_probability <= 1.0) {
        return Err(Error::Config(format!(
            "keep probability must lie in (0, 1], got {keep_probability}"
        )));
    }
    if !training || keep_probability >= 1.0 {
        return Ok(input.clone());
    }
    let mask = dropout_mask::<T, R>(input.shape(), keep_probability, rng)?;
    let data = input
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&x, &m)| x * m)
        .collect();
    Tensor::from_vec(input.shape(), data)
}
