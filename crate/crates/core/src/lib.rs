//! Edge-attention single-image super-resolution.
//!
//! A small reverse-mode tensor engine drives a generator whose residual blocks
//! are conditioned on Canny edge maps through normalized edge attention
//! (channel-wise modulation of batch-normalized features plus a spatial gate).

pub mod error;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{BatchNormMode, Element, Tape, Tensor, Var};
pub mod network;
pub mod objective;
pub mod imageio;
pub mod canny;
pub mod metrics;
pub mod gradcheck;
pub mod harness;
