use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::Hyperparameters;
use super::metrics::{metrics, MetricsReport};
use super::model::{build_variant, Model, VariantId};
use crate::dataio::{split_windows, Dataset, PaddedBatch, Window};
use crate::error::{Error, Result};
use crate::ndcore::{Adam, ParamId, ParamSet, Tensor};
use crate::rng;
use crate::scalar::Scalar;
use crate::temporal::PredictionSet;

/// Per-epoch training record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Summed training loss divided by the number of training predictions.
    pub train_loss: f64,
    /// `None` when the validation set yields no predictions.
    pub val: Option<MetricsReport>,
}

/// A trained model with its history; `best_epoch` is the epoch whose
/// parameters were kept.
#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub model: Model<T>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Windows of at least two steps, the smallest unit that yields a
/// prediction.
pub fn training_windows(ds: &Dataset, k: usize) -> Vec<Window> {
    split_windows(ds, k)
        .into_iter()
        .filter(|w| w.steps.len() >= 2)
        .collect()
}

/// Trains `variant` from a fresh seeded initialization.
///
/// Each epoch shuffles the windows, runs mini-batches of `batch_size`
/// windows and applies one Adam step per batch on the summed loss. After
/// every epoch the validation set is scored; the parameters of the epoch
/// with the best validation AUC are returned (the last epoch when AUC is
/// never defined).
pub fn train<T: Scalar>(
    variant: VariantId,
    hp: &Hyperparameters,
    train_ds: &Dataset,
    val_ds: &Dataset,
) -> Result<TrainOutcome<T>> {
    let model = build_variant::<T>(variant, hp, train_ds.skill_count())?;
    train_from(model, train_ds, val_ds)
}

/// Like [`train`] but starting from an existing model.
pub fn train_from<T: Scalar>(
    mut model: Model<T>,
    train_ds: &Dataset,
    val_ds: &Dataset,
) -> Result<TrainOutcome<T>> {
    let hp = model.hyperparameters().clone();
    let mut windows = training_windows(train_ds, hp.max_length);
    if windows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut adam = Adam::new(hp.adam())?;
    let mut history = Vec::with_capacity(hp.epochs);
    let mut best: Option<(f64, usize, ParamSet<T>)> = None;
    let mut grads: Vec<Tensor<T>> = model
        .params()
        .iter()
        .map(|p| Tensor::zeros(p.value.shape()))
        .collect();

    for epoch in 0..hp.epochs {
        windows.shuffle(&mut rng::stream(hp.seed, "shuffle", &[epoch as u64]));
        let learning_rate = adam.learning_rate_at(epoch);
        let mut loss_sum = 0.0;
        let mut prediction_count = 0usize;
        for (b, chunk) in windows.chunks(hp.batch_size).enumerate() {
            let batch = PaddedBatch::from_windows(chunk, hp.max_length);
            grads.iter_mut().for_each(|g| g.fill(T::zero()));
            let mut batch_loss = 0.0;
            for r in 0..batch.rows() {
                let mut dropout =
                    rng::stream(hp.seed, "dropout", &[epoch as u64, b as u64, r as u64]);
                let pass = model.forward(batch.row(r).trimmed(), Some(&mut dropout), false)?;
                batch_loss += pass.loss_value().as_f64();
                prediction_count += pass.predictions.len();
                Model::accumulate_gradients(&pass, &mut grads);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    loss: batch_loss,
                });
            }
            loss_sum += batch_loss;
            let params = model.params_mut();
            params.zero_grads();
            for (i, g) in grads.iter().enumerate() {
                params.accumulate_grad(ParamId(i), g);
            }
            adam.step(params, epoch)?;
        }
        let val = match evaluate(&model, val_ds, false) {
            Ok(report) => Some(report),
            Err(Error::EmptyPredictions) => None,
            Err(e) => return Err(e),
        };
        if let Some(auc) = val.as_ref().and_then(|v| v.auc) {
            if best.as_ref().is_none_or(|(b, _, _)| auc > *b) {
                best = Some((auc, epoch, model.params().clone()));
            }
        }
        history.push(EpochRecord {
            epoch,
            learning_rate,
            train_loss: loss_sum / prediction_count.max(1) as f64,
            val,
        });
    }
    let best_epoch = match best {
        Some((_, epoch, params)) => {
            *model.params_mut() = params;
            epoch
        }
        None => hp.epochs.saturating_sub(1),
    };
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}

/// Evaluation-mode predictions for every window of `ds`, pooled in
/// dataset order.
pub fn predict_dataset<T: Scalar>(
    model: &Model<T>,
    ds: &Dataset,
    strict_causal: bool,
) -> Result<PredictionSet<T>> {
    let k = model.hyperparameters().max_length;
    let windows = training_windows(ds, k);
    let batch = PaddedBatch::from_windows(&windows, k);
    let mut pooled = PredictionSet::default();
    for r in 0..batch.rows() {
        pooled.extend(model.predict(batch.row(r).trimmed(), strict_causal)?);
    }
    Ok(pooled)
}

/// Pooled metrics of `model` on `ds`.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    ds: &Dataset,
    strict_causal: bool,
) -> Result<MetricsReport> {
    let p = predict_dataset(model, ds, strict_causal)?;
    metrics(&p.probabilities_f64(), &p.targets)
}
