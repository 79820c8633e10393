use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::{AdamConfig, DecayUnit};

/// How the two dropout values are read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DropoutReading {
    /// The configured values are keep probabilities.
    #[default]
    Keep,
    /// The configured values are drop rates; keep = 1 − value.
    Drop,
}

/// Model and training hyperparameters. Defaults follow the published
/// configuration where one exists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparameters {
    pub learning_rate: f64,
    pub decay_rate: f64,
    pub decay_every: usize,
    pub decay_unit: DecayUnit,
    pub batch_size: usize,
    pub epochs: usize,
    /// Output channels of each gated convolution layer.
    pub conv_channels: Vec<usize>,
    pub kernel_width: usize,
    pub conv_keep: f64,
    pub lstm_units: usize,
    pub lstm_keep: f64,
    pub dropout_reading: DropoutReading,
    /// Switches every dropout off when false.
    pub dropout: bool,
    pub embedding_width: usize,
    pub train_embedding: bool,
    /// Window width `k`; longer sequences are chunked.
    pub max_length: usize,
    pub init_scale: f64,
    /// Weight of the auxiliary spatial-head cross-entropy.
    pub aux_loss_weight: f64,
    pub prob_floor: f64,
    pub seed: u64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            learning_rate: 0.001,
            decay_rate: 0.3,
            decay_every: 8,
            decay_unit: DecayUnit::Epoch,
            batch_size: 50,
            epochs: 10,
            conv_channels: vec![16, 50, 50],
            kernel_width: 4,
            conv_keep: 0.2,
            lstm_units: 30,
            lstm_keep: 0.3,
            dropout_reading: DropoutReading::Keep,
            dropout: true,
            embedding_width: 50,
            train_embedding: true,
            max_length: 200,
            init_scale: 0.05,
            aux_loss_weight: 1.0,
            prob_floor: 1e-7,
            seed: 0,
        }
    }
}

impl Hyperparameters {
    /// The small configuration used for full-model gradient checks.
    pub fn tiny() -> Self {
        Hyperparameters {
            conv_channels: vec![2, 3, 3],
            kernel_width: 2,
            lstm_units: 5,
            embedding_width: 4,
            max_length: 9,
            dropout: false,
            ..Self::default()
        }
    }

    fn keep(&self, value: f64) -> f64 {
        if !self.dropout {
            return 1.0;
        }
        match self.dropout_reading {
            DropoutReading::Keep => value,
            DropoutReading::Drop => 1.0 - value,
        }
    }

    /// Effective keep probability after each convolution layer.
    pub fn effective_conv_keep(&self) -> f64 {
        self.keep(self.conv_keep)
    }

    /// Effective keep probability on the LSTM output.
    pub fn effective_lstm_keep(&self) -> f64 {
        self.keep(self.lstm_keep)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            decay_rate: self.decay_rate,
            decay_every: self.decay_every,
            decay_unit: self.decay_unit,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.batch_size == 0
            || self.epochs == 0
            || self.lstm_units == 0
            || self.embedding_width == 0
        {
            return bad("batch_size, epochs, lstm_units and embedding_width must be positive");
        }
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return bad("conv_channels must be a non-empty list of positive counts");
        }
        if self.kernel_width == 0 {
            return bad("kernel_width must be positive");
        }
        if self.max_length < 2 {
            return bad("max_length must be at least 2");
        }
        for keep in [self.effective_conv_keep(), self.effective_lstm_keep()] {
            if !(keep > 0.0 && keep <= 1.0) {
                return bad("keep probabilities must lie in (0, 1]");
            }
        }
        if self.init_scale.is_nan()
            || self.init_scale <= 0.0
            || self.aux_loss_weight.is_nan()
            || self.aux_loss_weight < 0.0
        {
            return bad("init_scale must be positive and aux_loss_weight non-negative");
        }
        if !(self.prob_floor > 0.0 && self.prob_floor < 0.5) {
            return bad("prob_floor must lie in (0, 0.5)");
        }
        self.adam().validate()
    }

    /// Applies a `key=value` override. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut json = serde_json::to_value(&*self)?;
        let map = json
            .as_object_mut()
            .expect("hyperparameters serialize to an object");
        let Some(slot) = map.get_mut(key) else {
            return Err(Error::Config(format!("unknown hyperparameter `{key}`")));
        };
        let parsed = if key == "conv_channels" {
            let items: std::result::Result<Vec<usize>, _> = value
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect();
            serde_json::to_value(items.map_err(|e| Error::Config(format!("conv_channels: {e}")))?)?
        } else if slot.is_string() {
            serde_json::Value::String(value.to_string())
        } else {
            serde_json::from_str(value).map_err(|e| Error::Config(format!("{key}={value}: {e}")))?
        };
        *slot = parsed;
        *self = serde_json::from_value(json)
            .map_err(|e| Error::Config(format!("{key}={value}: {e}")))?;
        Ok(())
    }

    /// Applies a list of `key=value` strings.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        Hyperparameters::default().validate().unwrap();
        Hyperparameters::tiny().validate().unwrap();
    }

    #[test]
    fn overrides() {
        let mut hp = Hyperparameters::default();
        hp.apply_overrides(&[
            "learning_rate=0.01",
            "conv_channels=8,8",
            "decay_unit=step",
            "dropout=false",
        ])
        .unwrap();
        assert_eq!(hp.learning_rate, 0.01);
        assert_eq!(hp.conv_channels, vec![8, 8]);
        assert_eq!(hp.decay_unit, DecayUnit::Step);
        assert_eq!(hp.effective_conv_keep(), 1.0);
        assert!(hp.set("bogus", "1").is_err());
        assert!(hp.set("epochs", "many").is_err());
        assert!(Hyperparameters::default()
            .apply_overrides(&["conv_keep=0"])
            .is_err());
    }

    #[test]
    fn drop_reading_complements() {
        let hp = Hyperparameters {
            dropout_reading: DropoutReading::Drop,
            ..Hyperparameters::default()
        };
        assert!((hp.effective_conv_keep() - 0.8).abs() < 1e-15);
        assert!((hp.effective_lstm_keep() - 0.7).abs() < 1e-15);
    }
}
