//! Training and inference for tiny fully-connected networks on
//! microcontroller-class budgets.
//!
//! Float models train with per-sample SGD that computes one delta per neuron.
//! Quantized models run an int8 forward pass with power-of-two scales and
//! lookup-table activations, and fine-tune through a float backward pass that
//! dequantizes one layer at a time.

pub mod activation;
pub mod data;
pub mod error;
pub mod eval;
pub mod fastmath;
pub mod nn;
pub mod quant;
pub mod train;

pub use error::{Error, Result};
