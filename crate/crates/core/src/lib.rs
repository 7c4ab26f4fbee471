//! Optimal-transport co-attention for multimodal multiple-instance survival
//! prediction.
//!
//! The crate is organised bottom-up:
//!
//! - [`bagdata`]: instance bags, genomic profiles, survival labels, the FBAG
//!   binary format, dataset manifests and a synthetic data generator.
//! - [`ot`]: cost matrices, an exact transportation-simplex solver, balanced
//!   Sinkhorn and KL-relaxed unbalanced Sinkhorn.
//! - [`microbatch`]: micro-batch sampling of the pathology bag, co-attention
//!   through a fixed coupling, and the dense softmax co-attention baseline.
//! - [`neural`]: SELU genomic encoders, the pathology projection, single-layer
//!   attention aggregators, the hazard head and Adam.
//! - [`pipeline`]: the differentiable per-case forward pass with a tape and
//!   exact reverse-mode gradients.
//! - [`survival`]: discrete-time survival curves, the NLL loss, risk scores,
//!   C-index, Kaplan-Meier and the log-rank test.
//! - [`experiment`]: configuration, cross-validated training, ablation sweeps
//!   and solver benchmarks.

// NaN-rejecting checks are written as `!(x > 0.0)` on purpose, and the
// numerical kernels index several arrays in lockstep.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bagdata;
pub mod error;
pub mod experiment;
pub mod microbatch;
pub mod neural;
pub mod ot;
pub mod pipeline;
pub mod rng;
pub mod survival;

pub use error::{Error, Result};
