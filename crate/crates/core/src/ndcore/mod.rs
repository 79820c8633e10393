//! Minimal dense-array core: tensors, the kernels the models need, a
//! reverse-mode tape over them, Adam, and a finite-difference checker.

mod adam;
mod gradcheck;
pub mod ops;
mod param;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig, DecayUnit};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use ops::{
    conv1d_causal, dropout, glu, lstm_sequence, masked_softmax, matmul, Direction, LstmWeights,
};
pub use param::{ParamId, ParamSet, Parameter};
pub use tape::{bce_value, Gradients, Tape, Var};
pub use tensor::Tensor;
