//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: {left:?} vs {right:?}")]
    Dimension {
        context: String,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("axis {axis} out of range for shape {shape:?}")]
    Axis { axis: usize, shape: Vec<usize> },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("class label {label} out of range for {num_classes} classes")]
    LabelRange { label: usize, num_classes: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("operation requires pooling variant with attention weights; model uses {pooling}")]
    UnsupportedVariant { pooling: String },

    #[error(
        "operation requires an additive-composition model; this model is joint. \
         Re-train or re-configure with composition = \"additive\" to extract contributions"
    )]
    UnsupportedComposition,

    #[error("bag has {n} instances; exact coalition enumeration is capped at {cap} (no silent sampling)")]
    InstanceCount { n: usize, cap: usize },

    #[error("background set is empty; cannot estimate the expected per-instance score")]
    EmptyBackground,

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("generation error: {0}")]
    Generation(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("unknown slide id {0}")]
    UnknownSlide(u32),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dimension(context: impl Into<String>, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            context: context.into(),
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
