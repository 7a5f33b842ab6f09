//! Hypergraph-fusion graph convolutional networks for skeleton-based action
//! recognition, built on a self-contained f64 reverse-mode autodiff core.

pub mod autodiff;
pub mod error;
pub mod gradcheck;
pub mod container;
pub mod layout;
pub mod modality;
pub mod model;
pub mod skeleton;
pub mod runcfg;
pub mod tensor;
pub mod topology;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::Tensor;
