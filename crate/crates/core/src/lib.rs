//! Positive-unlabeled domain adaptation for multi-label text classifiers.
//!
//! A small transformer classifier is fine-tuned on a fully labeled source
//! corpus, then adapted to a partially labeled target corpus with a per-label
//! variational loss, embedding-level MixUp consistency, and a label-balanced
//! batch sampler. Everything is built on a self-contained tape autograd so
//! gradients are exact and checkable.

pub mod autograd;
pub mod batching;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod model;
pub mod objective;
pub mod optim;
pub mod par;
pub mod text;
pub mod trainer;

pub use error::{Error, Result};
