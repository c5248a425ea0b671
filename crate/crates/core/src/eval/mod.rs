//! Offline evaluation: AUC, normalized entropy, relative gains, paired
//! t-tests over eval shards and shuffle feature importance.

mod importance;
mod metrics;
mod stats;

pub use importance::{
    permute_group, rank_importance, shuffle_importance, shuffle_importance_with, GroupImportance,
};
pub use metrics::{
    auc, auc_gain_pct, deep_dive_report, eval_fingerprint, gains, ne, ne_gain_pct, shard_bounds, ArmGains,
    DeepDiveRow, MetricReport, TaskReport,
};
pub use stats::{ln_gamma, paired_ttest, regularized_incomplete_beta, student_t_cdf, student_t_two_sided_p, SignificanceResult};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("labels are single-class; metric undefined")]
    DegenerateLabels,
    #[error("label and score sequences differ in length ({labels} vs {scores})")]
    LengthMismatch { labels: usize, scores: usize },
    #[error("baseline AUC is 1; relative 1-AUC gain undefined")]
    BasePerfect,
    #[error("reports were computed on different eval sets")]
    MismatchedEvalSets,
    #[error("paired t-test needs at least 2 subsets, got {0}")]
    TooFewSubsets(usize),
    #[error("unknown feature group `{0}`")]
    UnknownFeatureGroup(String),
    #[error(transparent)]
    Ranker(#[from] crate::ranker::RankerError),
}
