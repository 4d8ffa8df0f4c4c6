//! MLM pretraining and last-layer probe finetuning.

mod optim;
mod pretrain;
mod probe;

pub use optim::{clip_global_norm, global_norm, AdamW};
pub use pretrain::{
    pretrain, prepare_examples, write_loss_curve, LossPoint, PreparedExamples, TrainConfig, Trainer,
};
pub use probe::{finetune_probe, ProbeConfig, ProbeHead, ProbeSet};

use crate::encoder::EncoderError;
use crate::io::IoError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("no training examples with maskable content")]
    NoExamples,
    #[error("log set {0} is empty")]
    EmptySet(usize),
    #[error("need at least two classes, found {0}")]
    LabelCardinality(usize),
    #[error("unknown class label {0:?}")]
    UnknownLabel(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Io(#[from] IoError),
}
