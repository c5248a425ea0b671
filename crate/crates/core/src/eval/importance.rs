use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::ne;
use super::EvalError;
use crate::features::{FeatureBundle, FeatureGroup};
use crate::ranker::{predict_parallel, ModelParams};
use crate::task::{Task, NUM_TASKS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupImportance {
    pub group: FeatureGroup,
    /// `NE(shuffled) - NE(intact)` per task.
    pub delta_ne: [f64; NUM_TASKS],
    pub mean_delta_ne: f64,
}

/// Copy of `eval` where example `i` carries the `group` values of example
/// `perm[i]`. Everything else is untouched.
pub fn permute_group(eval: &[FeatureBundle], group: FeatureGroup, perm: &[usize]) -> Vec<FeatureBundle> {
    eval.iter()
        .zip(perm)
        .map(|(b, &src)| {
            let mut out = b.clone();
            let donor = &eval[src];
            match group {
                FeatureGroup::Visual => out.visual.clone_from(&donor.visual),
                FeatureGroup::ItemTokens => out.item_tokens.clone_from(&donor.item_tokens),
                FeatureGroup::ProfileTokens => out.profile_tokens.clone_from(&donor.profile_tokens),
            }
            out
        })
        .collect()
}

fn task_ne(eval: &[FeatureBundle], preds: &[[f64; NUM_TASKS]]) -> Result<[f64; NUM_TASKS], EvalError> {
    let mut out = [0.0; NUM_TASKS];
    for t in Task::ALL {
        let k = t.index();
        let labels: Vec<u8> = eval.iter().map(|b| b.labels[k]).collect();
        let probs: Vec<f64> = preds.iter().map(|p| p[k]).collect();
        out[k] = ne(&labels, &probs)?;
    }
    Ok(out)
}

/// Importance under an explicit permutation of eval positions.
pub fn shuffle_importance_with(
    params: &ModelParams,
    eval: &[FeatureBundle],
    group: FeatureGroup,
    perm: &[usize],
) -> Result<GroupImportance, EvalError> {
    assert_eq!(perm.len(), eval.len(), "permutation length must match eval set");
    let intact = task_ne(eval, &predict_parallel(eval, params)?)?;
    let shuffled_set = permute_group(eval, group, perm);
    let shuffled = task_ne(&shuffled_set, &predict_parallel(&shuffled_set, params)?)?;
    let delta_ne: [f64; NUM_TASKS] = std::array::from_fn(|k| shuffled[k] - intact[k]);
    Ok(GroupImportance {
        group,
        mean_delta_ne: delta_ne.iter().sum::<f64>() / NUM_TASKS as f64,
        delta_ne,
    })
}

/// Permutes `group` jointly across eval examples with one seeded shuffle and
/// reports the NE degradation.
pub fn shuffle_importance(
    params: &ModelParams,
    eval: &[FeatureBundle],
    group: FeatureGroup,
    seed: u64,
) -> Result<GroupImportance, EvalError> {
    let mut perm: Vec<usize> = (0..eval.len()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    shuffle_importance_with(params, eval, group, &perm)
}

/// Sorted by mean ΔNE, most important first. Ties keep group order.
pub fn rank_importance(mut items: Vec<GroupImportance>) -> Vec<GroupImportance> {
    items.sort_by(|a, b| b.mean_delta_ne.total_cmp(&a.mean_delta_ne).then(a.group.cmp(&b.group)));
    items
}
