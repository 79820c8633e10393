//! Intermediate processing between the spatial and temporal parts:
//! binarized spatial scores and one-hot interaction records joined into
//! `F_LJF`.
//!
//! Index layout is taken literally: the spatial one-hot puts an active
//! spatial bit in the upper half (`M + s`), whereas the record one-hot puts
//! a correct answer in the lower half (`s`).

use crate::dataio::WindowRef;
use crate::error::{dim_err, Error, Result};
use crate::ndcore::Tensor;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct JointFeatures<T> {
    /// `k × 2M` one-hot spatial features
    pub ilf: Tensor<T>,
    /// `k × 2M` one-hot learning records
    pub lrs: Tensor<T>,
    /// `k × 4M`
    pub ljf: Tensor<T>,
}

/// Returns `(σ(score), bit)` per step, where the bit is 1 iff `σ(score) > 0.5`.
pub fn binarize_spatial<T: Scalar>(scores: &[T]) -> (Vec<T>, Vec<u8>) {
    let half = T::lit(0.5);
    scores
        .iter()
        .map(|&s| {
            let p = s.sigmoid();
            (p, u8::from(p > half))
        })
        .unzip()
}

fn one_hot<T: Scalar>(
    k: usize,
    m: usize,
    length: usize,
    index: impl Fn(usize) -> Result<usize>,
) -> Result<Tensor<T>> {
    let mut out = Tensor::zeros(&[k, 2 * m]);
    for t in 0..length {
        let i = index(t)?;
        out.set(t, i, T::one());
    }
    Ok(out)
}

fn checked_skill(skills: &[usize], t: usize, m: usize) -> Result<usize> {
    let s = skills[t];
    if s >= m {
        return Err(Error::IndexOutOfRange {
            what: "skill",
            index: s,
            bound: m,
        });
    }
    Ok(s)
}

/// `F_ILF`: valid row `t` is hot at `bit_t · M + s_t`.
pub fn one_hot_spatial<T: Scalar>(
    bits: &[u8],
    skills: &[usize],
    m: usize,
    length: usize,
) -> Result<Tensor<T>> {
    if bits.len() < length || skills.len() < length {
        return Err(dim_err(
            "one_hot_spatial",
            "fewer bits or skills than the window length",
        ));
    }
    one_hot(skills.len(), m, length, |t| {
        Ok(usize::from(bits[t] == 1) * m + checked_skill(skills, t, m)?)
    })
}

/// `F_LRS`: valid row `t` is hot at `(1 − r_t) · M + s_t`.
pub fn one_hot_records<T: Scalar>(window: WindowRef<'_>, m: usize) -> Result<Tensor<T>> {
    one_hot(window.width(), m, window.length, |t| {
        Ok(usize::from(window.correct[t] != 1) * m + checked_skill(window.skills, t, m)?)
    })
}

/// Columnwise `F_ILF ⊕ F_LRS`.
pub fn join_features<T: Scalar>(ilf: &Tensor<T>, lrs: &Tensor<T>) -> Result<Tensor<T>> {
    if ilf.shape() != lrs.shape() || ilf.shape().len() != 2 {
        return Err(dim_err(
            "join_features",
            format!("{:?} vs {:?}", ilf.shape(), lrs.shape()),
        ));
    }
    let (k, w) = (ilf.rows(), ilf.cols());
    let mut out = Tensor::zeros(&[k, 2 * w]);
    for t in 0..k {
        out.row_mut(t)[..w].copy_from_slice(ilf.row(t));
        out.row_mut(t)[w..].copy_from_slice(lrs.row(t));
    }
    Ok(out)
}

/// Builds all joint features of a window from its per-step spatial scores
/// (the projected score at each step's own skill).
pub fn joint_features<T: Scalar>(
    window: WindowRef<'_>,
    scores_at_skill: &[T],
    m: usize,
) -> Result<JointFeatures<T>> {
    let (_, bits) = binarize_spatial(scores_at_skill);
    let ilf = one_hot_spatial(&bits, window.skills, m, window.length)?;
    let lrs = one_hot_records(window, m)?;
    let ljf = join_features(&ilf, &lrs)?;
    Ok(JointFeatures { ilf, lrs, ljf })
}

/// Recovers `(s_t, r_t)` from one valid `F_LRS` row.
pub fn decode_record<T: Scalar>(row: &[T]) -> Option<(usize, bool)> {
    let m = row.len() / 2;
    let hot = row.iter().position(|&v| v == T::one())?;
    Some((hot % m, hot < m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binarize_threshold() {
        let (p, bits) = binarize_spatial(&[0.0f64, 1e-9, -3.0, 2.0]);
        assert_eq!(p[0], 0.5);
        assert_eq!(bits, vec![0, 1, 0, 1]);
    }

    #[test]
    fn hot_indices() {
        let hot = |t: &Tensor<f64>| t.row(0).iter().position(|&v| v == 1.0).unwrap();
        assert_eq!(hot(&one_hot_spatial(&[1], &[3], 5, 1).unwrap()), 8);
        assert_eq!(hot(&one_hot_spatial(&[0], &[3], 5, 1).unwrap()), 3);
        let w = |c: &'static [u8]| WindowRef {
            skills: &[3],
            correct: c,
            length: 1,
        };
        assert_eq!(hot(&one_hot_records(w(&[1]), 5).unwrap()), 3);
        assert_eq!(hot(&one_hot_records(w(&[0]), 5).unwrap()), 8);
        assert!(one_hot_spatial::<f64>(&[1], &[5], 5, 1).is_err());
    }

    #[test]
    fn joined_rows() {
        let w = WindowRef {
            skills: &[0, 2, 1, 0],
            correct: &[1, 0, 1, 0],
            length: 3,
        };
        let j = joint_features(w, &[0.3f64, -0.1, 0.0, 0.0], 3).unwrap();
        assert_eq!(j.ljf.shape(), &[4, 12]);
        for t in 0..3 {
            assert_eq!(j.ljf.row(t).iter().sum::<f64>(), 2.0);
            assert_eq!(
                decode_record(j.lrs.row(t)),
                Some((w.skills[t], w.correct[t] == 1))
            );
        }
        assert!(j.ljf.row(3).iter().all(|&v| v == 0.0));
        assert!(join_features(&j.ilf, &Tensor::zeros(&[4, 5])).is_err());
    }
}
