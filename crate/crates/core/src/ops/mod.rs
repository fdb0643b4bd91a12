//! Forward and backward kernels. Pure functions over [`Tensor`]s; the
//! [`crate::autodiff::Tape`] composes them.
//!
//! [`Tensor`]: crate::tensor::Tensor

pub mod conv;
pub mod elementwise;
pub mod layout;
pub mod linear;
pub mod norm;
pub mod pool;
pub mod sample;

pub use conv::{conv2d, Conv2dSpec};
pub use elementwise::{Binary, Unary};
pub use linear::fully_connected;
pub use norm::NormMode;
pub use pool::{avg_downsample, bilinear_upsample, global_avg_pool};
pub use sample::bilinear_sample;
