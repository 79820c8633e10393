use serde::{Deserialize, Serialize};

use super::param::ParamSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// What the staircase decay counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayUnit {
    #[default]
    Epoch,
    Step,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub decay_rate: f64,
    pub decay_every: usize,
    pub decay_unit: DecayUnit,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            decay_rate: 0.3,
            decay_every: 8,
            decay_unit: DecayUnit::Epoch,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.decay_rate > 0.0
            && self.decay_rate <= 1.0
            && self.decay_every > 0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid Adam configuration {self:?}"
            )))
        }
    }
}

/// Adam with bias correction and a staircase learning-rate decay.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    steps: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Adam { config, steps: 0 })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// `learning_rate · decay_rate^⌊count / decay_every⌋`, where `count` is
    /// the epoch or the optimizer step depending on [`DecayUnit`].
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let count = match self.config.decay_unit {
            DecayUnit::Epoch => epoch as u64,
            DecayUnit::Step => self.steps,
        };
        let drops = (count / self.config.decay_every as u64) as i32;
        self.config.learning_rate * self.config.decay_rate.powi(drops)
    }

    /// Applies one update from the gradients stored in `params`.
    ///
    /// Nothing is modified if any gradient is non-finite.
    pub fn step<T: Scalar>(&mut self, params: &mut ParamSet<T>, epoch: usize) -> Result<()> {
        if let Some(bad) = params.iter().find(|p| !p.grad.is_finite()) {
            return Err(Error::NonFiniteGradient(bad.name.clone()));
        }
        let lr = self.learning_rate_at(epoch);
        self.steps += 1;
        let t = self.steps as i32;
        let c = &self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let one = T::one();
        let correction1 = T::lit(1.0 - c.beta1.powi(t));
        let correction2 = T::lit(1.0 - c.beta2.powi(t));
        let (lr, eps) = (T::lit(lr), T::lit(c.epsilon));
        for p in params.iter_mut() {
            let values = p.value.data_mut();
            let m = p.first_moment.data_mut();
            let v = p.second_moment.data_mut();
            for (i, &g) in p.grad.data().iter().enumerate() {
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let m_hat = m[i] / correction1;
                let v_hat = v[i] / correction2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
