//! robaug: background augmentation for robot demonstration videos.
//!
//! The pipeline segments robot and task-object foregrounds, synthesizes
//! replacement backgrounds with one of six strategies, and composites
//! them while preserving foreground pixels exactly. Evaluation helpers
//! cover segmentation quality (mask GIoU), behavior-score
//! normalization for real-robot tables, scaling-experiment planning,
//! and throughput measurement.
//!
//! Every stochastic choice is drawn from a per-frame stream keyed by
//! (seed, episode id, frame index), so runs are reproducible byte for
//! byte regardless of batching or parallelism.

pub mod aug;
pub mod compositor;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod mask;
pub mod metrics;
pub mod seg;
pub mod stream;
pub mod treehash;
pub mod wire;

pub use error::{Error, Result};
