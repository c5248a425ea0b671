//! Experiment driver: one world, one split, one training seed, several arms
//! that differ only in feature groups and tokenizer.
//!
//! Run directory layout:
//!
//! ```text
//! <run>/world/manifest.json      generator config and positive rates
//! <run>/world/captions.jsonl     one caption per captioned item
//! <run>/world/impressions.jsonl  (write_datasets) labelled impressions
//! <run>/world/events.jsonl       (write_datasets) engagement event log
//! <run>/datasets/split.json      train/eval impression indices
//! <run>/datasets/<arm>/*.jsonl   (write_datasets) assembled bundles
//! <run>/checkpoints/<arm>.smrk   (write_checkpoints) trained parameters
//! <run>/metrics/<arm>.json       per-arm metric report and training log
//! <run>/metrics/summary.json     gains, t-tests, deep dive, importance, ablation
//! <run>/timing.json              wall-clock throughput per arm
//! <run>/report.txt               rendered tables
//! ```
//!
//! Everything under `metrics/` is a pure function of the config. Timings
//! live outside it.

mod config;
mod experiment;
mod report;

pub use config::{ArmConfig, CaptionerSpec, EvalSettings, ExperimentConfig, TokenizerSpec, DEFAULT_USER_TABLE_SIZE};
pub use experiment::{
    ablate_tokens, prepare, run_experiment, write_world, AblationResult, ArmData, ArmMetrics, ArmSummary,
    ArmTiming, CaptionStats, ExperimentSummary, Prepared, ReplicateGain, Timing,
};
pub use report::{render_reports, write_report};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("arm `{arm}` failed: {source}")]
    ArmFailed {
        arm: String,
        source: crate::ranker::RankerError,
    },
    #[error("missing run artifact {0}")]
    MissingArtifacts(PathBuf),
    #[error(transparent)]
    Datagen(#[from] crate::datagen::DatagenError),
    #[error(transparent)]
    Caption(#[from] crate::content::CaptionError),
    #[error(transparent)]
    Tokenize(#[from] crate::tokenize::TokenizeError),
    #[error(transparent)]
    Profile(#[from] crate::profile::ProfileError),
    #[error(transparent)]
    Features(#[from] crate::features::FeatureError),
    #[error(transparent)]
    Ranker(#[from] crate::ranker::RankerError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
