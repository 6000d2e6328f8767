//! Convolution layers whose receptive field is learned, not fixed: each
//! filter's weights are masked by a normalized Gaussian envelope with a
//! trainable aperture σ, so the effective kernel size adapts during training
//! by plain gradient descent. The envelope is rescaled so the mean weight
//! variance of a masked random kernel matches the unmasked one, which keeps
//! standard initializations calibrated at every aperture.
//!
//! The crate provides the envelope and its analytic σ-derivative
//! ([`envelope`]), forward/backward passes for adaptive and plain
//! convolution layers ([`layers`]), a small deterministic training stack —
//! dense, batch-norm, pooling, dropout layers, SGD with momentum, plateau
//! scheduling ([`network`], [`optim`], [`train`]) — plus datasets and IDX
//! loading ([`data`]), a reference filter bank ([`filters`]), the experiment
//! suite ([`experiments`]), and deterministic CSV/manifest emission
//! ([`report`]).
//!
//! Everything is reproducible: random state comes from explicit seeds, batch
//! parallelism does not change results, and reports render floats with
//! shortest-roundtrip formatting so repeated runs are byte-identical.

pub mod data;
pub mod envelope;
pub mod error;
pub mod experiments;
pub mod filters;
pub mod layers;
pub mod network;
pub mod optim;
pub mod report;
pub mod stats;
pub mod tensor;
pub mod train;

pub use error::{AconvError, Result};
