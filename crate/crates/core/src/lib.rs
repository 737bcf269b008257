//! Channel-scaled U-Net family for crack segmentation on edge hardware:
//! float reference inference, post-training quantization with an integer
//! engine, a cycle-approximate streaming accelerator simulator with on-chip
//! or off-chip skip-connection placement, segmentation and energy-efficiency
//! metrics, knowledge-distillation losses, and Pareto design-space
//! bookkeeping.

// Index arithmetic over NCHW tensors reads clearer with explicit loop
// counters than with iterator chains.
#![allow(clippy::needless_range_loop)]

pub mod dataflow;
pub mod distill;
pub mod error;
pub mod explorer;
pub mod io;
pub mod metrics;
pub mod model;
pub mod quant;
pub mod tensor;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
