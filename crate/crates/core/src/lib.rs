//! Side-aware episodic meta-learning for cross-dataset classification of
//! short evoked-potential signals.
//!
//! The crate covers the full workflow: aligning heterogeneous-length signal
//! datasets onto one grid, the dense-network substrate with exact gradients,
//! the multi-head autoencoder losses (plain and Siamese), subject-as-task
//! episodic meta-training, inference-time per-subject side fine-tuning, and
//! confusion/ROC evaluation, plus CSV/checkpoint plumbing, a synthetic
//! benchmark generator, and the `smeta` CLI tying it together.

pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod infer;
pub mod meta;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod runner;
pub mod synth;

pub use error::{Error, Result};
