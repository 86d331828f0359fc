//! Hair segmentation and matting on a small CPU tensor engine.

pub mod autograd;
pub mod data;
pub mod error;
pub mod guided_filter;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod tensor;
pub mod train;

pub use autograd::{Gradients, Graph, Var};
pub use error::{CheckpointError, Error, ImageError, Result};
pub use tensor::{Scalar, Shape, Tensor};
