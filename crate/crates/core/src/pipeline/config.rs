use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::content::{InvocationPolicy, RemoteCaptionerConfig};
use crate::datagen::WorldConfig;
use crate::features::{FeatureGroup, SplitRatio, DEFAULT_TABLE_SIZE};
use crate::profile::{DEFAULT_HALF_LIFE_S, DEFAULT_TOP_K};
use crate::ranker::{GroupSet, TrainConfig};
use crate::tokenize::{DEFAULT_MAX_LEN, TokenizeError, Tokenizer};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum TokenizerSpec {
    /// Frequency-trained word vocabulary with UNK.
    A {
        vocab_size: usize,
        #[serde(default = "default_max_len")]
        max_len: usize,
    },
    /// Seeded hashing into a fixed number of buckets.
    B {
        num_buckets: u64,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_max_len")]
        max_len: usize,
    },
}

fn default_max_len() -> usize {
    DEFAULT_MAX_LEN
}

impl Default for TokenizerSpec {
    fn default() -> Self {
        TokenizerSpec::A {
            vocab_size: 4096,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

impl TokenizerSpec {
    pub fn label(&self) -> &'static str {
        match self {
            TokenizerSpec::A { .. } => "A",
            TokenizerSpec::B { .. } => "B",
        }
    }

    /// Builds the tokenizer; family A trains its vocabulary on `corpus`.
    pub fn build(&self, corpus: &[crate::tokenize::NormalizedText]) -> Result<Tokenizer, TokenizeError> {
        use crate::tokenize::{train_vocab, HashingTokenizer, WordTokenizer};
        Ok(match *self {
            TokenizerSpec::A { vocab_size, max_len } => {
                Tokenizer::Word(WordTokenizer::new(train_vocab(corpus, vocab_size)?, max_len)?)
            }
            TokenizerSpec::B {
                num_buckets,
                seed,
                max_len,
            } => Tokenizer::Hashing(HashingTokenizer::new(num_buckets, seed, max_len)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmConfig {
    pub name: String,
    /// Column label in the summary table.
    #[serde(default)]
    pub feature_name: String,
    pub groups: GroupSet,
    /// Overrides the experiment tokenizer for this arm.
    #[serde(default)]
    pub tokenizer: Option<TokenizerSpec>,
}

impl ArmConfig {
    pub fn uses_tokens(&self) -> bool {
        self.groups.contains(FeatureGroup::ItemTokens) || self.groups.contains(FeatureGroup::ProfileTokens)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CaptionerSpec {
    /// Template captions rendered from the generator's ground truth.
    Synthetic,
    Remote(RemoteCaptionerConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub n_ttest_subsets: usize,
    pub topk_profile: usize,
    pub profile_half_life_s: f64,
    pub importance_seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            n_ttest_subsets: 8,
            topk_profile: DEFAULT_TOP_K,
            profile_half_life_s: DEFAULT_HALF_LIFE_S,
            importance_seed: 17,
        }
    }
}

/// Hashed user-ID rows in the default experiment. Smaller than the default
/// user count, so some users share an embedding row and the ID feature alone
/// cannot recover every user's activity level.
pub const DEFAULT_USER_TABLE_SIZE: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub captioner: CaptionerSpec,
    pub invocation: InvocationPolicy,
    /// Default tokenizer for arms that do not name their own.
    pub tokenizer: TokenizerSpec,
    /// Name of the reference arm; it must use visual features only.
    pub baseline: String,
    pub arms: Vec<ArmConfig>,
    pub train: TrainConfig,
    pub eval: EvalSettings,
    pub split: SplitRatio,
    pub user_table_size: usize,
    pub item_table_size: usize,
    /// Extra training seeds per arm (`train.seed + r` for `r` in `1..replicates`).
    pub replicates: usize,
    pub write_datasets: bool,
    pub write_checkpoints: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let visual = GroupSet::empty().with(FeatureGroup::Visual);
        let arm = |name: &str, feature: &str, groups, tokenizer| ArmConfig {
            name: name.into(),
            feature_name: feature.into(),
            groups,
            tokenizer,
        };
        Self {
            world: WorldConfig::default(),
            captioner: CaptionerSpec::Synthetic,
            invocation: InvocationPolicy::default(),
            tokenizer: TokenizerSpec::default(),
            baseline: "baseline".into(),
            arms: vec![
                arm("baseline", "Visual Features", visual, None),
                arm("mm_tokens_a", "MM-LLM Features", visual.with(FeatureGroup::ItemTokens), None),
                arm(
                    "mm_tokens_b",
                    "MM-LLM Features",
                    visual.with(FeatureGroup::ItemTokens),
                    Some(TokenizerSpec::B {
                        num_buckets: 64,
                        seed: 0,
                        max_len: DEFAULT_MAX_LEN,
                    }),
                ),
                arm("profile_a", "Profile Features", visual.with(FeatureGroup::ProfileTokens), None),
            ],
            train: TrainConfig::default(),
            eval: EvalSettings::default(),
            split: SplitRatio::default(),
            user_table_size: DEFAULT_USER_TABLE_SIZE,
            item_table_size: DEFAULT_TABLE_SIZE,
            replicates: 1,
            write_datasets: false,
            write_checkpoints: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Sets every seed (world, split, training) from one value.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.world.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn tokenizer_for<'a>(&'a self, arm: &'a ArmConfig) -> &'a TokenizerSpec {
        arm.tokenizer.as_ref().unwrap_or(&self.tokenizer)
    }

    pub fn arm(&self, name: &str) -> Result<&ArmConfig, PipelineError> {
        self.arms
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| PipelineError::Config(format!("no arm named `{name}`")))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        self.world.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.train.validate()?;
        self.invocation.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        let base = self.arm(&self.baseline)?;
        if base.uses_tokens() {
            return bad(format!("baseline arm `{}` must not use token features", base.name));
        }
        for (i, a) in self.arms.iter().enumerate() {
            if a.name.is_empty() || !a.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return bad(format!("arm name `{}` must be non-empty [A-Za-z0-9_-]", a.name));
            }
            if self.arms[..i].iter().any(|b| b.name == a.name) {
                return bad(format!("duplicate arm `{}`", a.name));
            }
        }
        if self.eval.n_ttest_subsets < 2 {
            return bad("eval.n_ttest_subsets must be at least 2".into());
        }
        if self.eval.topk_profile == 0 {
            return bad("eval.topk_profile must be positive".into());
        }
        if self.user_table_size == 0 || self.item_table_size == 0 {
            return bad("table sizes must be positive".into());
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_and_validates() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"world": {"n_users": 10, "x": 0}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"tokenizer": {"type": "B", "num_buckets": 8, "extra": 1}}"#).is_err());
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = ExperimentConfig::from_json(
            r#"{"world": {"n_impressions": 500}, "tokenizer": {"type": "B", "num_buckets": 128}}"#,
        )
        .unwrap();
        assert_eq!(cfg.world.n_impressions, 500);
        assert_eq!(
            cfg.tokenizer,
            TokenizerSpec::B {
                num_buckets: 128,
                seed: 0,
                max_len: DEFAULT_MAX_LEN
            }
        );
        assert_eq!(cfg.arms.len(), 4);
    }

    #[test]
    fn baseline_must_exist_and_be_token_free() {
        let mut cfg = ExperimentConfig {
            baseline: "nope".into(),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg.baseline = "mm_tokens_a".into();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn duplicate_arm_names_rejected() {
        let mut cfg = ExperimentConfig::default();
        let dup = cfg.arms[1].clone();
        cfg.arms.push(dup);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn seed_override_reaches_world_and_training() {
        let cfg = ExperimentConfig::default().with_seed(42);
        assert_eq!((cfg.world.seed, cfg.train.seed), (42, 42));
    }
}
