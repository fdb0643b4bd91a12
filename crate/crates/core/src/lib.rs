//! Region-oriented attention for multi-camera BEV detection.
//!
//! The crate projects ego-frame 3D boxes into each camera to build
//! overlap-count attention labels, predicts those maps with a multi-scale
//! large-kernel network, multiplies them onto the fused image features and
//! supervises them with an L1 loss. All network math runs on a small dense
//! tensor engine with analytic backward rules ([`autodiff`]) that are
//! verified against central differences ([`gradcheck`]).

pub mod autodiff;
pub mod blocks;
pub mod checks;
pub mod config;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod labels;
pub mod loss;
pub mod network;
pub mod ops;
pub mod optim;
pub mod params;
pub mod scene;
pub mod tensor;
pub mod train;

pub use autodiff::{GradPair, Gradients, Tape, Var};
pub use error::{Error, Result};
pub use tensor::{DType, Tensor};
