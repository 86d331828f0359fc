//! Concrete kernels on [`Tensor`](crate::tensor::Tensor)s. The autograd
//! graph wraps these and their hand-written adjoints.

pub mod activation;
pub mod conv;
pub mod gradient;
pub mod norm;
pub mod resample;

pub use activation::{relu, softmax_channels};
pub use conv::{conv2d, conv_macs, ConvConfig, ConvParams, Padding};
pub use gradient::{sobel_gradients, GradField, GRAD_EPS};
pub use norm::{batch_norm, NormMode, RunningStats, BN_EPS, BN_MOMENTUM};
pub use resample::upsample_replicate2x;
