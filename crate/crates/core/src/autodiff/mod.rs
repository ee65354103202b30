//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! The engine covers exactly the layers used by the shape-regression and
//! Siamese networks: 1-D convolution, max pooling, batch normalization,
//! sigmoid, dense, dropout, flatten and Euclidean distance, plus a few
//! reductions for building losses. A [`Tape`] records one forward pass;
//! [`Tape::backward`] walks it in reverse and accumulates parameter
//! gradients into the [`ParamStore`] that owns the weights.

mod params;
mod real;
mod tape;
mod tensor;

pub use params::{ParamId, ParamStore, Parameter};
pub(crate) use real::matmul;
pub use real::Real;
pub use tape::{Gradients, Mode, Tape, Var, BN_EPS, BN_MOMENTUM, EUCLID_EPS};
pub use tensor::Tensor;
