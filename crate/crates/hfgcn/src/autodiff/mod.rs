//! Self-contained reverse-mode differentiation over dense f64 tensors:
//! pointwise and temporal convolutions, batch normalization, activations,
//! the contraction patterns the model needs, pooling, and a scalar loss.

pub mod kernels;
mod params;
mod tape;

pub use kernels::ContractKind;
pub use params::{BatchNorm, BnState, ParamId, ParamStore, Parameter, Session};
pub use tape::{Corruption, Gradients, Tape, TensorId};
