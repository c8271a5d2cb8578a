//! Structured filter pruning during training.
//!
//! The crate trains small VGG-style convolutional networks from scratch and
//! removes whole convolutional filters while training proceeds, instead of
//! pruning a converged network and retraining it afterwards. It contains:
//!
//! - [`tensor`] and [`kernels`]: a dense tensor type plus the forward and
//!   backward kernels (convolution, batch norm, ReLU, max-pool, linear,
//!   softmax cross-entropy) and the Adam optimizer. Convolution kernels skip
//!   pruned filters and count the multiply-accumulates they actually execute.
//! - [`network`]: a sequential conv/pool/linear network built from layer specs.
//! - [`criteria`]: filter significance scores (L1 norm, mean activation,
//!   random) and mask application.
//! - [`schedule`]: gradual pruning-while-training schedules, the delayed
//!   every-k-th-epoch variant, and the one-shot prune-retrain baseline.
//! - [`cost`]: analytic MAC and memory-access counts per layer, training
//!   savings and latency projections.
//! - [`data`]: IDX and CIFAR binary loaders, synthetic datasets and
//!   deterministic batching.
//! - [`experiment`]: JSON run configs, the training runner, metrics CSV,
//!   checkpoints, run comparison with SVG plots and cost reports.

pub mod cost;
pub mod criteria;
pub mod data;
pub mod error;
pub mod experiment;
pub mod kernels;
pub mod network;
pub mod schedule;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
