//! Intrinsic MLM metrics and ranking metrics.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::LogRecord;
use crate::encoder::{plan_masks, EncoderError, EncoderModel};
use crate::seed;
use crate::tokenizer::{TokenId, TokenizerModel};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("no maskable tokens in the evaluation set")]
    NoMaskedTokens,
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum DatasetTag {
    #[serde(rename = "IDTS")]
    Idts,
    #[serde(rename = "ODTS")]
    Odts,
    #[default]
    #[serde(rename = "other")]
    Other,
}

impl std::str::FromStr for DatasetTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "IDTS" => Ok(Self::Idts),
            "ODTS" => Ok(Self::Odts),
            "OTHER" => Ok(Self::Other),
            _ => Err(format!("unknown dataset tag {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicReport {
    /// exp of `mean_nll`.
    pub perplexity: f64,
    pub accuracy: f64,
    pub mean_nll: f64,
    pub masked_token_count: usize,
    pub dataset_tag: DatasetTag,
}

/// One evaluated masked position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedToken {
    pub window: usize,
    pub position: usize,
    pub original: TokenId,
    pub logprob: f64,
    pub predicted: TokenId,
}

/// Score every masked position of every window. Masks are planned with a
/// stream derived from `mask_seed` and the window index, so the same records
/// get the same masks for any model.
pub fn masked_predictions(
    model: &EncoderModel,
    tokenizer: &TokenizerModel,
    records: &[LogRecord],
    mask_seed: u64,
) -> Result<Vec<MaskedToken>, MetricsError> {
    let windows: Vec<Vec<TokenId>> = records
        .iter()
        .flat_map(|r| tokenizer.encode_chunked(r.raw.as_bytes(), model.config.max_seq_len))
        .map(|s| s.ids)
        .collect();
    let random_pool = tokenizer.content_ids();
    let stream = seed::derive(mask_seed, "eval-mask");
    let per_window = windows
        .par_iter()
        .enumerate()
        .map(|(w, ids)| {
            let mut rng = seed::rng(seed::derive_index(stream, w as u64));
            let plan = match plan_masks(ids, &tokenizer.delimiter_ids, &random_pool, &model.config, &mut rng) {
                Ok(plan) => plan,
                Err(EncoderError::NoEligibleTokens) => return Ok(Vec::new()),
                Err(e) => return Err(e),
            };
            let scored = model.mlm_loss(ids, &plan)?;
            Ok(plan
                .positions
                .iter()
                .zip(&plan.originals)
                .zip(scored.token_logprobs.iter().zip(&scored.predictions))
                .map(|((&position, &original), (&logprob, &predicted))| MaskedToken {
                    window: w,
                    position,
                    original,
                    logprob,
                    predicted,
                })
                .collect())
        })
        .collect::<Result<Vec<Vec<MaskedToken>>, EncoderError>>()?;
    Ok(per_window.into_iter().flatten().collect())
}

/// Pseudo-perplexity and masked-token accuracy.
pub fn intrinsic_eval(
    model: &EncoderModel,
    tokenizer: &TokenizerModel,
    records: &[LogRecord],
    mask_seed: u64,
    dataset_tag: DatasetTag,
) -> Result<IntrinsicReport, MetricsError> {
    let tokens = masked_predictions(model, tokenizer, records, mask_seed)?;
    summarize(&tokens, dataset_tag)
}

pub fn summarize(tokens: &[MaskedToken], dataset_tag: DatasetTag) -> Result<IntrinsicReport, MetricsError> {
    if tokens.is_empty() {
        return Err(MetricsError::NoMaskedTokens);
    }
    let n = tokens.len() as f64;
    let mean_nll = -tokens.iter().map(|t| t.logprob).sum::<f64>() / n;
    let correct = tokens.iter().filter(|t| t.predicted == t.original).count();
    Ok(IntrinsicReport {
        perplexity: mean_nll.exp(),
        accuracy: correct as f64 / n,
        mean_nll,
        masked_token_count: tokens.len(),
        dataset_tag,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedResult {
    pub query_id: String,
    pub ranked_doc_ids: Vec<String>,
    pub relevant_doc_ids: BTreeSet<String>,
}

impl RankedResult {
    /// 1-based rank of the first relevant document.
    pub fn first_relevant_rank(&self) -> Option<usize> {
        self.ranked_doc_ids
            .iter()
            .position(|d| self.relevant_doc_ids.contains(d))
            .map(|i| i + 1)
    }

    /// Precision at each relevant hit, averaged over all relevant documents
    /// (missed ones count as 0).
    pub fn average_precision(&self) -> f64 {
        if self.relevant_doc_ids.is_empty() {
            return 0.0;
        }
        let mut hits = 0;
        let mut sum = 0.0;
        for (i, d) in self.ranked_doc_ids.iter().enumerate() {
            if self.relevant_doc_ids.contains(d) {
                hits += 1;
                sum += hits as f64 / (i + 1) as f64;
            }
        }
        sum / self.relevant_doc_ids.len() as f64
    }
}

/// Mean reciprocal rank; queries without a relevant hit contribute 0.
pub fn mrr(results: &[RankedResult]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    let total: f64 = results
        .iter()
        .map(|r| r.first_relevant_rank().map_or(0.0, |k| 1.0 / k as f64))
        .sum();
    total / results.len() as f64
}

/// Mean average precision.
pub fn map(results: &[RankedResult]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    results.iter().map(RankedResult::average_precision).sum::<f64>() / results.len() as f64
}
