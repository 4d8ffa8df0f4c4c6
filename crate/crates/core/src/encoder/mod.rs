//! Small pre-norm transformer encoder with an MLM head.
//!
//! Parameters live in one flat `Vec<f64>` described by a [`ParamLayout`];
//! gradients, optimizer moments and checkpoints share that layout. Every
//! stored parameter is kept representable as `f32` so checkpoints reload
//! bit-exactly, while all arithmetic runs in `f64`.

mod checkpoint;
mod config;
mod masking;
mod model;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointManifest, TensorEntry};
pub use config::EncoderConfig;
pub use masking::{plan_masks, MaskPlan, Replacement};
pub use model::{Embedding, EncoderModel, ForwardCache, ForwardOutput, MlmLoss, POOLING};
pub use params::{LayerTensors, ParamLayout, TensorSpec};

use crate::io::IoError;

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    BadConfig(String),
    #[error("sequence of {len} tokens exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {0} is outside the vocabulary")]
    UnknownToken(u32),
    #[error("attention mask length {mask} does not match {len} tokens")]
    MaskLength { mask: usize, len: usize },
    #[error("empty token sequence")]
    EmptySequence,
    #[error("no content tokens to pool")]
    EmptyContent,
    #[error("mask plan has no positions")]
    EmptyPlan,
    #[error("mask plan is inconsistent with the sequence: {0}")]
    BadPlan(String),
    #[error("every token is a delimiter or special token")]
    NoEligibleTokens,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Round to the nearest `f32`.
#[inline]
pub fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}
