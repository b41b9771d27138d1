//! Training engine for populations of small convolutional networks that
//! periodically transplant layer weights into each other ("grafting").
//!
//! The crate is organized around a handful of building blocks:
//!
//! - [`tensor`]: dense row-major f64 tensors, the only numeric container used.
//! - [`nn`]: the network itself (conv / relu / pool / dense), cross-entropy,
//!   SGD with momentum and step decay, and a finite-difference gradient check.
//! - [`data`]: synthetic image generation, CSV image loading, normalization,
//!   and deterministic epoch batching.
//! - [`criteria`]: per-filter l1 norms and histogram entropy, the signals that
//!   decide how much of a foreign layer to accept.
//! - [`graft`]: the three scion sources (noise, internal, external) and the
//!   adaptive mixing coefficient.
//! - [`distill`]: temperature softmax, teacher averaging, and the distillation
//!   loss used when student networks also learn from teachers.
//! - [`orchestrator`]: lock-step training of several networks with graft
//!   barriers; deterministic for a fixed config regardless of thread schedule.
//! - [`checkpoint`], [`report`], [`config`]: the serialization and metrics
//!   surfaces shared by the library and the `graftnet` command-line tool.
//!
//! Everything is seeded explicitly and runs on the CPU in f64. Two runs with
//! the same config produce byte-identical metrics and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod criteria;
pub mod data;
pub mod distill;
pub mod error;
pub mod graft;
pub mod nn;
pub mod orchestrator;
pub mod params;
pub mod report;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;

#[cfg(doctest)]
mod book;
