//! Spatio-temporal autoencoder for object-affordance segmentation.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: tensors and reverse-mode differentiation
//! - [`layers`]: VGG encoder, pre-activation residual block, ConvLSTM cell, MLP head
//! - [`model`]: the two-stream autoencoder with soft attention and its loss
//! - [`flow`]: RGB-D scene flow estimation and colorization
//! - [`data`]: synthetic interaction sequences, dataset I/O and preprocessing
//! - [`metrics`]: IoU / F1 / weighted-F evaluation
//! - [`trainer`]: Xavier init, Adam, the loss-weight schedule, checkpoints

pub mod autodiff;
pub mod data;
pub mod error;
pub mod flow;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod trainer;

pub use autodiff::{Graph, Tensor, Var};
pub use error::{Error, Result};
