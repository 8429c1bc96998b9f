//! Tensor-level numerical kernels with explicit forward and backward passes.
//!
//! These are free of graph bookkeeping; [`crate::autograd`] wires them into
//! the tape.

pub mod conv;
pub mod norm;
pub mod resize;
pub mod shuffle;

pub use conv::{conv2d_direct, conv2d_forward, Conv2dSpec, PadMode};
pub use resize::bilinear_resize;
pub use shuffle::{pixel_shuffle, pixel_unshuffle};
