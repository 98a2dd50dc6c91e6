//! Dual question-encoder document VQA.
//!
//! Two question encoders (bidirectional and causal) produce pooled features
//! that are concatenated, compressed by a learned affine map, and fused with
//! per-element content and visual features to score every element of a
//! document as a member of the answer set.

pub mod data;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod numerics;
pub mod tokenizer;

pub use error::{Error, Result};
