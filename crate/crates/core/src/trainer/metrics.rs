//! Evaluation metrics over pooled predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// RMSE, AUC, accuracy and r² of a prediction set. AUC and r² are
/// undefined (`None`) when all targets share one class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse: f64,
    pub auc: Option<f64>,
    pub acc: f64,
    pub r2: Option<f64>,
    pub count: usize,
}

fn check(probabilities: &[f64], targets: &[u8]) -> Result<()> {
    if probabilities.is_empty() {
        return Err(Error::EmptyPredictions);
    }
    if probabilities.len() != targets.len() {
        return Err(crate::error::dim_err(
            "metrics",
            format!(
                "{} predictions for {} targets",
                probabilities.len(),
                targets.len()
            ),
        ));
    }
    Ok(())
}

pub fn rmse(probabilities: &[f64], targets: &[u8]) -> Result<f64> {
    check(probabilities, targets)?;
    let sse: f64 = probabilities
        .iter()
        .zip(targets)
        .map(|(&p, &r)| (f64::from(r) - p).powi(2))
        .sum();
    Ok((sse / probabilities.len() as f64).sqrt())
}

/// Fraction of predictions on the correct side of 0.5 (0.5 counts as 1).
pub fn accuracy(probabilities: &[f64], targets: &[u8]) -> Result<f64> {
    check(probabilities, targets)?;
    let hits = probabilities
        .iter()
        .zip(targets)
        .filter(|&(&p, &r)| u8::from(p >= 0.5) == r)
        .count();
    Ok(hits as f64 / probabilities.len() as f64)
}

/// Rank-based ROC AUC with tied scores given their average rank.
pub fn auc(probabilities: &[f64], targets: &[u8]) -> Result<f64> {
    check(probabilities, targets)?;
    let positives = targets.iter().filter(|&&r| r == 1).count();
    let negatives = targets.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClassTargets);
    }
    let mut order: Vec<usize> = (0..probabilities.len()).collect();
    order.sort_by(|&a, &b| probabilities[a].total_cmp(&probabilities[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && probabilities[order[j + 1]] == probabilities[order[i]] {
            j += 1;
        }
        let average_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if targets[idx] == 1 {
                rank_sum += average_rank;
            }
        }
        i = j + 1;
    }
    let (p, n) = (positives as f64, negatives as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Coefficient of determination `1 − SS_res/SS_tot` against the binary
/// targets.
pub fn r_squared(probabilities: &[f64], targets: &[u8]) -> Result<f64> {
    check(probabilities, targets)?;
    let n = probabilities.len() as f64;
    let mean = targets.iter().map(|&r| f64::from(r)).sum::<f64>() / n;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (&p, &r) in probabilities.iter().zip(targets) {
        let r = f64::from(r);
        ss_res += (r - p).powi(2);
        ss_tot += (r - mean).powi(2);
    }
    if ss_tot == 0.0 {
        return Err(Error::SingleClassTargets);
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// All four metrics at once.
pub fn metrics(probabilities: &[f64], targets: &[u8]) -> Result<MetricsReport> {
    Ok(MetricsReport {
        rmse: rmse(probabilities, targets)?,
        auc: auc(probabilities, targets).ok(),
        acc: accuracy(probabilities, targets)?,
        r2: r_squared(probabilities, targets).ok(),
        count: probabilities.len(),
    })
}
