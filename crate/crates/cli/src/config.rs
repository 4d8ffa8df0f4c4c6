use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use logenc_core::analytics::{PatternConfig, TriageConfig};
use logenc_core::corpus::ApproxDedupConfig;
use logenc_core::seed;
use logenc_core::templates::DrainConfig;
use logenc_core::tokenizer::DEFAULT_DELIMITERS;
use logenc_core::trainer::{ProbeConfig, TrainConfig};
use logenc_core::EncoderConfig;
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

/// Invalid configuration or arguments; maps to exit status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub tokenizer: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub reports: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthBlock {
    pub family: String,
    pub n: usize,
    pub anomaly_rate: f64,
    pub ood_family: String,
    pub ood_n: usize,
}

impl Default for SynthBlock {
    fn default() -> Self {
        Self {
            family: "mixed".into(),
            n: 4000,
            anomaly_rate: 0.0,
            ood_family: "ood".into(),
            ood_n: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitBlock {
    pub train: f64,
    pub id_test: f64,
}

impl Default for SplitBlock {
    fn default() -> Self {
        Self { train: 0.9, id_test: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerBlock {
    pub vocab_size: usize,
    pub delimiters: String,
    pub source_weights: BTreeMap<String, f64>,
}

impl Default for TokenizerBlock {
    fn default() -> Self {
        Self {
            vocab_size: 4096,
            delimiters: DEFAULT_DELIMITERS.into(),
            source_weights: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilarityBlock {
    pub positive_pairs: usize,
    pub negative_pairs: usize,
}

impl Default for SimilarityBlock {
    fn default() -> Self {
        Self {
            positive_pairs: 1000,
            negative_pairs: 1000,
        }
    }
}

/// Everything a pipeline run needs. Module `seed` fields are ignored: every
/// module seed is derived from the global seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    pub seed: u64,
    pub paths: Paths,
    pub synth: SynthBlock,
    pub split: SplitBlock,
    pub dedup: ApproxDedupConfig,
    pub tokenizer: TokenizerBlock,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub drain: DrainConfig,
    pub similarity: SimilarityBlock,
    pub detect: PatternConfig,
    pub triage: TriageConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            paths: Paths::default(),
            synth: SynthBlock::default(),
            split: SplitBlock::default(),
            dedup: ApproxDedupConfig::default(),
            tokenizer: TokenizerBlock::default(),
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            probe: ProbeConfig::default(),
            drain: DrainConfig::default(),
            similarity: SimilarityBlock::default(),
            detect: PatternConfig::default(),
            triage: TriageConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
        let config: Self =
            serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        if config.version != CONFIG_VERSION {
            return Err(config_error(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                config.version
            )));
        }
        Ok(config)
    }

    /// Overwrite every module seed with a stream derived from the global seed.
    pub fn derive_seeds(&mut self) {
        let g = self.seed;
        self.dedup.seed = seed::derive(g, "dedup");
        self.train.seed = seed::derive(g, "pretrain");
        self.probe.train.seed = seed::derive(g, "probe");
        self.detect.seed = seed::derive(g, "detect");
    }

    pub fn module_seed(&self, module: &str) -> u64 {
        seed::derive(self.seed, module)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_unknown_keys_fail() {
        let c = PipelineConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<PipelineConfig>(&text).unwrap(), c);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"bogus": 1}"#).is_err());
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"train": {"max_step": 1}}"#).is_err());
        let partial: PipelineConfig = serde_json::from_str(r#"{"train": {"max_steps": 7}}"#).unwrap();
        assert_eq!(partial.train.max_steps, 7);
        assert_eq!(partial.train.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn seeds_depend_only_on_global_seed() {
        let mut a = PipelineConfig {
            seed: 3,
            ..Default::default()
        };
        let mut b = a.clone();
        b.train.seed = 99;
        a.derive_seeds();
        b.derive_seeds();
        assert_eq!(a, b);
        assert_ne!(a.module_seed("synth"), a.module_seed("dedup"));
    }
}
