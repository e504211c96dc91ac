//! Speaker-vector anonymization with orthogonal Householder stacks.
//!
//! Embeddings are rotated by a learned orthogonal map `W` built from
//! Householder reflections, around the training mean:
//! `x_a = W (x - μ) + μ`. Because `W` is orthogonal by construction, the
//! transform never collapses the embedding distribution, while the training
//! objective pushes each anonymized vector away from its source identity.
//!
//! The crate also carries the selection-based baseline, the privacy/utility
//! metrics (EER, voice-similarity matrices, gain of voice distinctiveness)
//! and an embedding-level simulation of the four standard attack scenarios.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod anonymizer;
pub mod attack;
pub mod config;
pub mod error;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod pool;
pub mod training;

pub use error::{Error, Result};
