//! Train small convolutional networks, score their neurons on importance
//! scales that are comparable across layers, and gradually thin the whole
//! network while holding accuracy.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] — dense `f64` tensors and the conv/matmul kernels,
//! * [`network`] — layers, models, SGD training and the model file format,
//! * [`data`] — IDX loading, synthetic tasks, splits and batching,
//! * [`scoring`] — per-neuron importance scores on a shared scale,
//! * [`pruning`] — neuron selection, model surgery and the prune loops,
//! * [`config`] / [`cli`] — the run configuration and the `thinner` binary.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod network;
pub mod pruning;
pub mod scoring;
pub mod seeds;
pub mod tensor;

pub use error::{Error, Result};
