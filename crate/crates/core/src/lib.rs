//! Disentangled spatial/channel window-attention networks for multi-channel
//! imagery, built on a small reverse-mode autodiff tape.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`]: dense `f64` tensors, the recording [`tensor::Tape`] and a
//!   central-difference gradient checker.
//! * [`nn`]: parameter storage, linear layers, multi-head attention and the
//!   pre-norm encoder layer.
//! * [`block`]: window partitioning, the spatial-token and channel-token
//!   paths, gated fusion, the multi-scale feed-forward network, and every
//!   ablation wiring.
//! * [`model`]: patch embedding, stage stacks, patch merging and the
//!   classification head.
//! * [`data`]: hyperspectral cube files, patch extraction, splits and a
//!   synthetic cube generator.
//! * [`train`]: loss, Adam, the training loop, metrics and checkpoints.
//! * [`analysis`]: feature dumps, first canonical correlation, parameter and
//!   FLOP accounting.

pub mod analysis;
pub mod block;
pub mod data;
mod error;
pub mod exec;
pub(crate) mod io_util;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, FormatError, Result};
pub use exec::Exec;
pub use tensor::{Tape, Tensor, Var};
