//! Personalized prior-knowledge features: interaction embedding, historical
//! relevant performance (HRP), concept-wise percent correct (CPC) and their
//! gated fusion.
//!
//! The `record_*` functions build the differentiable versions on a
//! [`Tape`]; the free functions evaluate the same graph on constants.

use crate::dataio::WindowRef;
use crate::error::{dim_err, Error, Result};
use crate::ndcore::{Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Skill embedding matrix `E` (`M × n`).
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable<T> {
    pub table: Tensor<T>,
}

impl<T: Scalar> EmbeddingTable<T> {
    pub fn new(table: Tensor<T>) -> Result<Self> {
        if table.shape().len() != 2 || table.rows() == 0 || table.cols() == 0 {
            return Err(dim_err(
                "embedding",
                format!("expected M × n, got {:?}", table.shape()),
            ));
        }
        Ok(EmbeddingTable { table })
    }

    pub fn skill_count(&self) -> usize {
        self.table.rows()
    }

    pub fn width(&self) -> usize {
        self.table.cols()
    }
}

/// All intermediate prior features of one window.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorFeatures<T> {
    /// `k × 2n` embedded interactions
    pub lis: Tensor<T>,
    /// `k × 2n`
    pub hrp: Tensor<T>,
    /// `k × M`
    pub cpc: Tensor<T>,
    /// `k × (4n + M)`
    pub jpf: Tensor<T>,
    /// `k × (4n + M)`
    pub ila: Tensor<T>,
}

fn check_skills(window: WindowRef<'_>, m: usize) -> Result<()> {
    if window.length > window.width() || window.correct.len() != window.width() {
        return Err(dim_err(
            "window",
            format!("length {} of width {}", window.length, window.width()),
        ));
    }
    match window.skills[..window.length].iter().find(|&&s| s >= m) {
        Some(&s) => Err(Error::IndexOutOfRange {
            what: "skill",
            index: s,
            bound: m,
        }),
        None => Ok(()),
    }
}

/// Records the skill vectors `𝒔_t` (`k × n`) and the embedded interaction
/// matrix `F_LIS` (`k × 2n`): row `t` is `[𝒔_t ⊕ 0]` when answered
/// correctly and `[0 ⊕ 𝒔_t]` otherwise; padded rows are zero.
pub(crate) fn record_embedding<T: Scalar>(
    tape: &mut Tape<'_, T>,
    table: Var,
    window: WindowRef<'_>,
) -> Result<(Var, Var)> {
    let m = tape.value(table).rows();
    let n = tape.value(table).cols();
    check_skills(window, m)?;
    let k = window.width();
    let skills = tape.gather_rows(table, window.skills)?;
    let mut right = Tensor::zeros(&[k, n]);
    let mut wrong = Tensor::zeros(&[k, n]);
    for t in 0..window.length {
        let target = if window.correct[t] == 1 {
            &mut right
        } else {
            &mut wrong
        };
        target.row_mut(t).fill(T::one());
    }
    let left_half = tape.mul_const(skills, right)?;
    let right_half = tape.mul_const(skills, wrong)?;
    let lis = tape.concat_cols(&[left_half, right_half])?;
    Ok((skills, lis))
}

/// Causal attention mask for HRP: step `t < length` may look at `j < t`.
pub(crate) fn history_mask(k: usize, length: usize) -> Vec<bool> {
    let mut mask = vec![false; k * k];
    for t in 0..length.min(k) {
        for j in 0..t {
            mask[t * k + j] = true;
        }
    }
    mask
}

/// Records `F_HRP`: row `t` is `Σ_{j<t} softmax_j(𝒔_j·𝒔_t) e_j`.
pub(crate) fn record_hrp<T: Scalar>(
    tape: &mut Tape<'_, T>,
    embedded: Var,
    skill_vectors: Var,
    length: usize,
) -> Result<Var> {
    let k = tape.value(embedded).rows();
    if tape.value(skill_vectors).rows() != k {
        return Err(dim_err("hrp", "embedded rows and skill-vector rows differ"));
    }
    let relation = tape.matmul_nt(skill_vectors, skill_vectors)?;
    let weights = tape.masked_softmax_rows(relation, &history_mask(k, length))?;
    tape.matmul(weights, embedded)
}

/// Records `F_JPF = F_LIS ⊕ F_HRP ⊕ F_CPC` (or any other list of parts) and
/// `F_ILA = (F_JPF·W₃ + b₃) ⊗ σ(F_JPF·W₄ + b₄)`.
pub(crate) fn record_fuse<T: Scalar>(
    tape: &mut Tape<'_, T>,
    parts: &[Var],
    w_value: Var,
    b_value: Var,
    w_gate: Var,
    b_gate: Var,
) -> Result<(Var, Var)> {
    let jpf = if parts.len() == 1 {
        parts[0]
    } else {
        tape.concat_cols(parts)?
    };
    let value = tape.affine(jpf, w_value, b_value)?;
    let gate = tape.affine(jpf, w_gate, b_gate)?;
    let ila = tape.glu(value, gate)?;
    Ok((jpf, ila))
}

/// Embedded interaction matrix `F_LIS` (`k × 2n`).
pub fn embed_interactions<T: Scalar>(
    window: WindowRef<'_>,
    table: &EmbeddingTable<T>,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let e = tape.frozen(&table.table);
    let (_, lis) = record_embedding(&mut tape, e, window)?;
    Ok(tape.value(lis).clone())
}

/// Historical relevant performance `F_HRP` (`k × 2n`).
pub fn historical_relevant_performance<T: Scalar>(
    embedded: &Tensor<T>,
    skill_vectors: &Tensor<T>,
    length: usize,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let e = tape.frozen(embedded);
    let s = tape.frozen(skill_vectors);
    let hrp = record_hrp(&mut tape, e, s, length)?;
    Ok(tape.value(hrp).clone())
}

/// Concept-wise percent correct `F_CPC` (`k × M`).
///
/// Entry `(t, m)` is the fraction of correct answers on skill `m` among
/// steps `0..t` (strictly before `t`), or 0 when `m` was not attempted
/// before `t`. Padded rows are zero.
pub fn concept_percent_correct<T: Scalar>(window: WindowRef<'_>, m: usize) -> Result<Tensor<T>> {
    check_skills(window, m)?;
    let k = window.width();
    let mut out = Tensor::zeros(&[k, m]);
    let mut attempts = vec![0u32; m];
    let mut correct = vec![0u32; m];
    for t in 0..window.length {
        let row = out.row_mut(t);
        for s in 0..m {
            if attempts[s] > 0 {
                row[s] = T::lit(f64::from(correct[s]) / f64::from(attempts[s]));
            }
        }
        let s = window.skills[t];
        attempts[s] += 1;
        correct[s] += u32::from(window.correct[t] == 1);
    }
    Ok(out)
}

/// Gated fusion of the prior features, returning `(F_JPF, F_ILA)`.
pub fn fuse_prior<T: Scalar>(
    lis: &Tensor<T>,
    hrp: &Tensor<T>,
    cpc: &Tensor<T>,
    w3: &Tensor<T>,
    b3: &Tensor<T>,
    w4: &Tensor<T>,
    b4: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if lis.cols() != hrp.cols() {
        return Err(dim_err(
            "fuse_prior",
            format!("F_LIS width {} vs F_HRP width {}", lis.cols(), hrp.cols()),
        ));
    }
    let mut tape = Tape::new();
    let parts = [tape.frozen(lis), tape.frozen(hrp), tape.frozen(cpc)];
    let ws = [
        tape.frozen(w3),
        tape.frozen(b3),
        tape.frozen(w4),
        tape.frozen(b4),
    ];
    let (jpf, ila) = record_fuse(&mut tape, &parts, ws[0], ws[1], ws[2], ws[3])?;
    Ok((tape.value(jpf).clone(), tape.value(ila).clone()))
}

/// Every prior feature of one window, evaluated with fixed weights.
pub fn prior_features<T: Scalar>(
    window: WindowRef<'_>,
    table: &EmbeddingTable<T>,
    w3: &Tensor<T>,
    b3: &Tensor<T>,
    w4: &Tensor<T>,
    b4: &Tensor<T>,
) -> Result<PriorFeatures<T>> {
    let mut tape = Tape::new();
    let e = tape.frozen(&table.table);
    let (s, lis) = record_embedding(&mut tape, e, window)?;
    let hrp = record_hrp(&mut tape, lis, s, window.length)?;
    let cpc = tape.constant(concept_percent_correct(window, table.skill_count())?);
    let ws = [
        tape.frozen(w3),
        tape.frozen(b3),
        tape.frozen(w4),
        tape.frozen(b4),
    ];
    let (jpf, ila) = record_fuse(&mut tape, &[lis, hrp, cpc], ws[0], ws[1], ws[2], ws[3])?;
    Ok(PriorFeatures {
        lis: tape.value(lis).clone(),
        hrp: tape.value(hrp).clone(),
        cpc: tape.value(cpc).clone(),
        jpf: tape.value(jpf).clone(),
        ila: tape.value(ila).clone(),
    })
}
