use serde::{Deserialize, Serialize};

use super::config::Hyperparameters;
use super::model::VariantId;
use super::train::{evaluate, train};
use crate::dataio::Split;
use crate::error::{Error, Result};

/// Test metrics averaged over repeated runs. AUC and r² average only the
/// runs where they are defined (`None` if none are).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub rmse: f64,
    pub auc: Option<f64>,
    pub acc: f64,
    pub r2: Option<f64>,
    pub runs: usize,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Trains and tests `variant` once per seed (the seed replaces `hp.seed`)
/// and averages the test metrics.
pub fn repeat_seeds(
    variant: VariantId,
    hp: &Hyperparameters,
    split: &Split,
    seeds: &[u64],
) -> Result<MeanMetrics> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let mut reports = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let hp = Hyperparameters { seed, ..hp.clone() };
        let outcome = train::<f64>(variant, &hp, &split.train, &split.val)?;
        reports.push(evaluate(&outcome.model, &split.test, false)?);
    }
    let n = reports.len() as f64;
    Ok(MeanMetrics {
        rmse: reports.iter().map(|r| r.rmse).sum::<f64>() / n,
        auc: mean_defined(reports.iter().map(|r| r.auc)),
        acc: reports.iter().map(|r| r.acc).sum::<f64>() / n,
        r2: mean_defined(reports.iter().map(|r| r.r2)),
        runs: reports.len(),
    })
}

/// [`repeat_seeds`] for each variant in turn.
pub fn compare_variants(
    variants: &[VariantId],
    hp: &Hyperparameters,
    split: &Split,
    seeds: &[u64],
) -> Result<Vec<(VariantId, MeanMetrics)>> {
    variants
        .iter()
        .map(|&v| repeat_seeds(v, hp, split, seeds).map(|m| (v, m)))
        .collect()
}
