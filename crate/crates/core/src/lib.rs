//! Deep atrous guided filter (DAGF) image restoration.
//!
//! A low-resolution network ([`nn::LrNet`]) restores a downsampled copy of the
//! input; a trainable guided filter ([`guided::GuidedFilter`]) lifts the result
//! back to full resolution using the input as guide. Everything runs on the
//! small reverse-mode autograd engine in [`autograd`].

pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod guided;
pub mod kernels;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod optim;
mod real;
pub mod simulate;
pub mod tensor;
pub mod train;
pub mod verify;

pub use autograd::{Graph, ParamId, ParamStore, Var};
pub use error::{Error, Result};
pub use real::Real;
pub use tensor::Tensor;
