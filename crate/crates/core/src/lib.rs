//! Belief-aware decision making over a retrieval memory.
//!
//! A session-scoped memory bank stores past joint embeddings together with a
//! context payload. At each step the current embedding retrieves its top-K
//! neighbours by cosine similarity, their payloads are pooled with softmax
//! weights into a belief vector, and a small fusion network turns
//! `(embedding, belief)` into the latent state read by an answer head, a
//! PPO-trained policy head and a value head.
//!
//! Module map:
//! - [`numerics`]: dense matrices, softmax/cross-entropy, Adam, gradient checks
//! - [`memory`]: the bank, exact top-K retrieval, belief pooling, bank files
//! - [`model`]: encoders, context payload, fusion backbone, heads, checkpoints
//! - [`training`]: rewards, advantages, clipped surrogate, total loss, train loop
//! - [`env`]: the synthetic partially observable QA generator and dataset files
//! - [`eval`]: greedy/sampled evaluation and reports
//! - [`config`]: the `key = value` run configuration
//! - [`verify`]: the invariant gates behind `belief verify`

pub mod config;
pub mod env;
mod error;
pub mod eval;
pub mod memory;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
