//! Gated convolution stack producing the spatial feature `F_KS`, and the
//! per-skill projection head on top of it.

use crate::error::{dim_err, Result};
use crate::ndcore::{ops, Tape, Tensor, Var};
use crate::rng::StreamRng;
use crate::scalar::Scalar;

/// Weights of one `{conv (value), conv (gate), GLU}` layer.
#[derive(Clone, Copy, Debug)]
pub struct ConvLayer<'a, T> {
    /// `w × C_in × C_out`
    pub value_kernels: &'a Tensor<T>,
    pub value_bias: &'a Tensor<T>,
    pub gate_kernels: &'a Tensor<T>,
    pub gate_bias: &'a Tensor<T>,
}

/// Tape handles of one gated convolution layer.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvLayerVars {
    pub value_kernels: Var,
    pub value_bias: Var,
    pub gate_kernels: Var,
    pub gate_bias: Var,
}

/// Applies inverted dropout when a generator is supplied.
pub(crate) fn record_dropout<T: Scalar>(
    tape: &mut Tape<'_, T>,
    x: Var,
    keep: f64,
    rng: Option<&mut StreamRng>,
) -> Result<Var> {
    match rng {
        Some(rng) if keep < 1.0 => {
            let mask = ops::dropout_mask(tape.value(x).shape(), keep, rng)?;
            tape.mul_const(x, mask)
        }
        _ => Ok(x),
    }
}

/// Records the gated convolution stack; dropout with `keep` follows every
/// layer when `rng` is given (training mode).
pub(crate) fn record_conv_stack<T: Scalar>(
    tape: &mut Tape<'_, T>,
    input: Var,
    layers: &[ConvLayerVars],
    keep: f64,
    mut rng: Option<&mut StreamRng>,
) -> Result<Var> {
    let mut x = input;
    for layer in layers {
        let value = tape.conv1d_causal(x, layer.value_kernels, layer.value_bias)?;
        let gate = tape.conv1d_causal(x, layer.gate_kernels, layer.gate_bias)?;
        let glu = tape.glu(value, gate)?;
        x = record_dropout(tape, glu, keep, rng.as_deref_mut())?;
    }
    Ok(x)
}

/// Spatial feature `F_KS` (`k × C_last`) of an `F_ILA` window.
pub fn extract_spatial<T: Scalar>(
    ila: &Tensor<T>,
    layers: &[ConvLayer<'_, T>],
    keep: f64,
    rng: Option<&mut StreamRng>,
) -> Result<Tensor<T>> {
    if layers.is_empty() {
        return Err(dim_err("extract_spatial", "at least one layer is required"));
    }
    let mut tape = Tape::new();
    let input = tape.frozen(ila);
    let vars: Vec<ConvLayerVars> = layers
        .iter()
        .map(|l| ConvLayerVars {
            value_kernels: tape.frozen(l.value_kernels),
            value_bias: tape.frozen(l.value_bias),
            gate_kernels: tape.frozen(l.gate_kernels),
            gate_bias: tape.frozen(l.gate_bias),
        })
        .collect();
    let out = record_conv_stack(&mut tape, input, &vars, keep, rng)?;
    Ok(tape.value(out).clone())
}

/// Raw per-skill spatial scores `F_KS · W_s + b_s` (`k × M`).
pub fn project_per_skill<T: Scalar>(
    features: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    ops::add_bias(&ops::matmul(features, weights)?, bias)
}

/// Projected score of each valid step at its own skill `s_t`.
pub fn scores_at_skill<T: Scalar>(scores: &Tensor<T>, skills: &[usize], length: usize) -> Vec<T> {
    (0..length).map(|t| scores.get(t, skills[t])).collect()
}
