//! Desk-scale toolkit for security-log language modelling.
//!
//! The pipeline runs corpus deduplication ([`corpus`]), byte-level BPE
//! tokenizer training ([`tokenizer`]), a small transformer encoder trained
//! with a delimiter-aware masked-language-model objective ([`encoder`],
//! [`trainer`]), and an evaluation and analytics suite over the resulting
//! embeddings ([`metrics`], [`templates`], [`analytics`]). [`synth`]
//! provides seeded synthetic corpora for every stage.

pub mod analytics;
pub mod corpus;
pub mod encoder;
pub mod io;
pub mod metrics;
pub mod seed;
pub mod synth;
pub mod templates;
pub mod tokenizer;
pub mod trainer;

pub use corpus::{LogRecord, Split};
pub use encoder::{Embedding, EncoderConfig, EncoderModel};

pub use tokenizer::{TokenSequence, TokenizerModel};
