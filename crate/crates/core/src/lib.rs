//! Uncertainty scoring for sampled model responses.
//!
//! Each instance carries `k` sampled responses with unit-norm embeddings and
//! sequence log-probabilities. The score combines the log-determinant of a
//! jittered embedding Gram matrix (semantic spread) with the mean
//! incoherence `1 - p` of the responses, reweighted through a diagonal
//! quality matrix. The crate also provides common baselines, a metric suite,
//! and synthetic generators with brute-force checks.

pub mod baselines;
pub mod error;
pub mod evaluate;
pub mod ingest;
pub mod kernel;
pub mod linalg;
pub mod pipeline;
pub mod synthetic;

pub use error::{Error, Result};
pub use ingest::{Dataset, InstanceRecord};
pub use kernel::{KernelConfig, ResponseSample, ScoreBundle};
