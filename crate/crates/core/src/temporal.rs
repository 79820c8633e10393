//! Bidirectional temporal encoder, knowledge-state projection and
//! next-step prediction.

use crate::dataio::WindowRef;
use crate::error::{dim_err, Result};
use crate::ndcore::{lstm_sequence, ops, Direction, LstmWeights, Tape, Tensor, Var};
use crate::rng::StreamRng;
use crate::scalar::Scalar;
use crate::spatial::record_dropout;

/// Per-transition predictions of one or more windows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PredictionSet<T> {
    /// Predicted `p_{t+1}` in `(0, 1)`.
    pub probabilities: Vec<T>,
    /// Observed `r_{t+1}`.
    pub targets: Vec<u8>,
    /// Skill `s_{t+1}` being predicted.
    pub skills: Vec<usize>,
}

impl<T: Scalar> PredictionSet<T> {
    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    pub fn extend(&mut self, other: PredictionSet<T>) {
        self.probabilities.extend(other.probabilities);
        self.targets.extend(other.targets);
        self.skills.extend(other.skills);
    }

    pub fn probabilities_f64(&self) -> Vec<f64> {
        self.probabilities.iter().map(|p| p.as_f64()).collect()
    }
}

/// Positions `(t, s_{t+1})` and targets `r_{t+1}` for `t = 0 ..= length-2`.
pub(crate) fn next_step_positions(
    window: WindowRef<'_>,
) -> (Vec<(usize, usize)>, Vec<u8>, Vec<usize>) {
    let n = window.length.saturating_sub(1);
    let positions = (0..n).map(|t| (t, window.skills[t + 1])).collect();
    let targets = (0..n).map(|t| window.correct[t + 1]).collect();
    let skills = (0..n).map(|t| window.skills[t + 1]).collect();
    (positions, targets, skills)
}

/// Tape handles of one LSTM direction.
#[derive(Clone, Copy, Debug)]
pub(crate) struct LstmVars {
    pub input: Var,
    pub hidden: Var,
    pub bias: Var,
}

/// Records `h_t = h→_t ⊕ h←_t` (or just `h→_t` without a backward
/// direction), followed by output dropout when `rng` is given.
///
/// With `zero_backward` the backward half is replaced by zeros, which gives
/// a strictly causal read-out of a bidirectional model.
#[allow(clippy::too_many_arguments)]
pub(crate) fn record_encoder<T: Scalar>(
    tape: &mut Tape<'_, T>,
    input: Var,
    forward: LstmVars,
    backward: Option<LstmVars>,
    length: usize,
    keep: f64,
    rng: Option<&mut StreamRng>,
    zero_backward: bool,
) -> Result<Var> {
    let fw = tape.lstm(
        input,
        forward.input,
        forward.hidden,
        forward.bias,
        Direction::Forward,
        length,
    )?;
    let h = match backward {
        None => fw,
        Some(bw) => {
            let back = tape.lstm(
                input,
                bw.input,
                bw.hidden,
                bw.bias,
                Direction::Backward,
                length,
            )?;
            let back = if zero_backward {
                let shape = tape.value(back).shape().to_vec();
                tape.mul_const(back, Tensor::zeros(&shape))?
            } else {
                back
            };
            tape.concat_cols(&[fw, back])?
        }
    };
    record_dropout(tape, h, keep, rng)
}

/// Records `p_{t+1} = σ(state(t, s_{t+1}))`, returning the probability
/// column and the matching prediction set skeleton (probabilities filled
/// from the tape).
pub(crate) fn record_predictions<T: Scalar>(
    tape: &mut Tape<'_, T>,
    state: Var,
    window: WindowRef<'_>,
) -> Result<Option<(Var, PredictionSet<T>)>> {
    let (positions, targets, skills) = next_step_positions(window);
    if positions.is_empty() {
        return Ok(None);
    }
    let picked = tape.pick(state, &positions)?;
    let probs = tape.sigmoid(picked);
    let set = PredictionSet {
        probabilities: tape.value(probs).data().to_vec(),
        targets,
        skills,
    };
    Ok(Some((probs, set)))
}

/// Bidirectional encoding `h_t = h→_t ⊕ h←_t` (`k × 2g`), evaluated
/// without dropout. Both directions run over the valid prefix only; padded
/// rows are zero.
pub fn bilstm_encode<T: Scalar>(
    ljf: &Tensor<T>,
    forward: LstmWeights<'_, T>,
    backward: LstmWeights<'_, T>,
    length: usize,
) -> Result<Tensor<T>> {
    let fw = lstm_sequence(ljf, forward, Direction::Forward, length)?;
    let bw = lstm_sequence(ljf, backward, Direction::Backward, length)?;
    let (k, g1, g2) = (ljf.rows(), fw.cols(), bw.cols());
    let mut out = Tensor::zeros(&[k, g1 + g2]);
    for t in 0..k {
        out.row_mut(t)[..g1].copy_from_slice(fw.row(t));
        out.row_mut(t)[g1..].copy_from_slice(bw.row(t));
    }
    Ok(out)
}

/// Raw knowledge state `H · W₅ + b₅` (`k × M`).
pub fn knowledge_state<T: Scalar>(
    hidden: &Tensor<T>,
    w5: &Tensor<T>,
    b5: &Tensor<T>,
) -> Result<Tensor<T>> {
    ops::add_bias(&ops::matmul(hidden, w5)?, b5)
}

/// Next-step predictions of one window from its knowledge state.
///
/// Windows shorter than two steps yield an empty set.
pub fn predict_next<T: Scalar>(
    state: &Tensor<T>,
    window: WindowRef<'_>,
) -> Result<PredictionSet<T>> {
    if window.length > state.rows() {
        return Err(dim_err(
            "predict_next",
            format!(
                "length {} beyond {} state rows",
                window.length,
                state.rows()
            ),
        ));
    }
    let mut tape = Tape::new();
    let s = tape.frozen(state);
    Ok(record_predictions(&mut tape, s, window)?
        .map(|(_, p)| p)
        .unwrap_or_default())
}
