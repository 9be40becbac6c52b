//! Core algorithms for merge-friendly post-training quantization.
//!
//! This crate hosts the pure, IO-free pieces of the `mergeq` laboratory:
//!
//! - [`tensor`]: a minimal dense f64 tensor.
//! - [`nnet`]: fully-connected networks, softmax cross-entropy, exact
//!   reverse-mode gradients, finite-difference oracles, Adam, and a
//!   cosine-warmup learning-rate schedule.
//! - [`synthdata`]: seeded 2-D classification domains (a source plus
//!   rotated targets) acting as a desk-scale domain-adaptation testbed.
//! - [`quant`]: a uniform symmetric quantizer with step calibration,
//!   quantization-noise sampling, and activation fake-quantization.
//! - [`hdrq`]: noise-based Hessian-regularizing reconstruction with
//!   source-distance regularization, plus simplified reconstruction
//!   baselines.
//! - [`merge`]: floating-point, integer-domain, and noise-sampled merging
//!   of quantized checkpoints with cosine-similarity candidate selection.
//! - [`analysis`]: error-barrier measurement, loss-surface grids, and
//!   Hessian quadratic-form probes.
//!
//! Everything is deterministic given explicit seeds; the crate is
//! `no_std` + `alloc` so the numeric core carries no platform state.
//! File formats, configuration, and the CLI live in the companion crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod analysis;
pub mod error;
pub mod hdrq;
pub mod merge;
pub(crate) mod math;
pub mod nnet;
pub mod quant;
pub mod rng;
pub mod synthdata;
pub mod tensor;

pub use error::{Error, Result};
pub use nnet::{Activation, Batch, Gradients, Network, OptimState};
pub use quant::{QuantScheme, QuantTarget, QuantizedNet, QuantizedTensor};
pub use rng::Prng;
pub use tensor::Tensor;
