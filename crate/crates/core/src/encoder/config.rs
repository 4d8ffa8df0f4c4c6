use serde::{Deserialize, Serialize};

use super::EncoderError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub dropout_rate: f64,
    /// Probability that an eligible (content) token is selected.
    pub mask_rate: f64,
    pub mask_token_fraction: f64,
    pub random_fraction: f64,
    pub keep_fraction: f64,
    /// Learned absolute position embeddings. Disabling them makes the
    /// encoder permutation-equivariant, which some tests rely on.
    pub positional: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 4096,
            hidden_dim: 128,
            num_layers: 4,
            num_heads: 4,
            ffn_dim: 512,
            max_seq_len: 256,
            dropout_rate: 0.1,
            mask_rate: 0.15,
            mask_token_fraction: 0.8,
            random_fraction: 0.1,
            keep_fraction: 0.1,
            positional: true,
        }
    }
}

impl EncoderConfig {
    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |msg: String| Err(EncoderError::BadConfig(msg));
        if self.vocab_size == 0 || self.hidden_dim == 0 || self.ffn_dim == 0 {
            return bad("vocab_size, hidden_dim and ffn_dim must be positive".into());
        }
        if self.num_heads == 0 || self.hidden_dim % self.num_heads != 0 {
            return bad(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if self.max_seq_len < 2 {
            return bad("max_seq_len must be at least 2".into());
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return bad(format!("mask_rate {} must lie in (0, 1)", self.mask_rate));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} must lie in [0, 1)", self.dropout_rate));
        }
        let fractions = [self.mask_token_fraction, self.random_fraction, self.keep_fraction];
        if fractions.iter().any(|f| *f < 0.0) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("mask/random/keep fractions must be non-negative and sum to 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(EncoderConfig::default().validate().is_ok());
        let bad_heads = EncoderConfig { num_heads: 3, ..Default::default() };
        assert!(bad_heads.validate().is_err());
        let bad_rate = EncoderConfig { mask_rate: 1.0, ..Default::default() };
        assert!(bad_rate.validate().is_err());
        let bad_split = EncoderConfig { keep_fraction: 0.2, ..Default::default() };
        assert!(bad_split.validate().is_err());
        let short = EncoderConfig { max_seq_len: 1, ..Default::default() };
        assert!(short.validate().is_err());
    }
}
