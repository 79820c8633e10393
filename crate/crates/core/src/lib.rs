//! Knowledge-tracing laboratory.
//!
//! Implements DKT-STDRL (gated-convolution spatial features fused with a
//! bidirectional LSTM over student exercise logs), the DKT and CKT
//! baselines, four ablations, and the data pipeline, trainer and metrics
//! needed to compare them.
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix it to `f64`, which is what the trainer,
//! checkpoints and CLI use.

pub mod dataio;
pub mod error;
pub mod fusion;
pub mod ndcore;
pub mod prior;
pub mod rng;
pub mod scalar;
pub mod spatial;
pub mod temporal;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = ndcore::Tensor<f64>;
pub type ParamSet = ndcore::ParamSet<f64>;

pub type Tensor32 = ndcore::Tensor<f32>;

pub type Model = trainer::Model<f64>;
pub type Model32 = trainer::Model<f32>;
