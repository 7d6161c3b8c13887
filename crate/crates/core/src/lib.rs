//! Spatial-temporal adapter with multi-head attention pooling for
//! classifying grids of frozen time-series foundation model embeddings.

pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{Result, StampError};
pub use tensor::{Gradients, Graph, MaskStream, Scalar, Tensor, Var};
