//! milab — a desk-scale multiple-instance-learning laboratory.
//!
//! Attention-pooled MIL models with two predictor compositions (joint and
//! additive), exact per-instance credit assignment with a brute-force
//! Shapley oracle, a synthetic bag generator with planted instance-level
//! ground truth, and training/evaluation machinery for bag classification
//! and heatmap quality.

#![allow(clippy::needless_range_loop)]

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod credit;
pub mod dataset_io;
pub mod fileio;
pub mod metrics;
pub mod error;
pub mod eval;
pub mod model;
pub mod pgm;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
