use crate::error::{Error, Result};
use crate::ndcore::bce_value;
use crate::scalar::Scalar;
use crate::temporal::PredictionSet;

/// Summed binary cross-entropy over every prediction in the set, with
/// probabilities clipped to `[floor, 1 − floor]`. Padded and first-step
/// positions never enter a [`PredictionSet`].
pub fn masked_cross_entropy<T: Scalar>(predictions: &PredictionSet<T>, floor: T) -> Result<T> {
    if predictions.is_empty() {
        return Err(Error::EmptyPredictions);
    }
    let targets: Vec<T> = predictions
        .targets
        .iter()
        .map(|&r| T::lit(f64::from(r)))
        .collect();
    Ok(bce_value(&predictions.probabilities, &targets, floor))
}
