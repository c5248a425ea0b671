use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::features::FeatureBundle;
use crate::hash::Fnv1a64;
use crate::task::{Task, NUM_TASKS};

const NE_CLAMP: f64 = 1e-7;

fn check_lengths(labels: &[u8], scores: &[f64]) -> Result<(), EvalError> {
    if labels.len() != scores.len() {
        return Err(EvalError::LengthMismatch {
            labels: labels.len(),
            scores: scores.len(),
        });
    }
    Ok(())
}

/// Rank-sum AUC with average ranks for ties.
pub fn auc(labels: &[u8], scores: &[f64]) -> Result<f64, EvalError> {
    check_lengths(labels, scores)?;
    let n_pos = labels.iter().filter(|&&y| y != 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Ranks are 1-based; a tie block spanning ranks i+1..=j gets (i+1+j)/2.
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + 1 + j) as f64 / 2.0;
        let pos_in_block = order[i..j].iter().filter(|&&k| labels[k] != 0).count();
        pos_rank_sum += avg * pos_in_block as f64;
        i = j;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Mean log loss divided by the entropy of the background positive rate.
pub fn ne(labels: &[u8], probs: &[f64]) -> Result<f64, EvalError> {
    check_lengths(labels, probs)?;
    let n_pos = labels.iter().filter(|&&y| y != 0).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(EvalError::DegenerateLabels);
    }
    let n = labels.len() as f64;
    let ll: f64 = labels
        .iter()
        .zip(probs)
        .map(|(&y, &p)| {
            let p = p.clamp(NE_CLAMP, 1.0 - NE_CLAMP);
            if y != 0 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / n;
    let rate = n_pos as f64 / n;
    let background = -(rate * rate.ln() + (1.0 - rate) * (1.0 - rate).ln());
    Ok(ll / background)
}

/// Relative reduction of `1 - AUC`, in percent. Positive is better.
pub fn auc_gain_pct(auc_base: f64, auc_treat: f64) -> Result<f64, EvalError> {
    if auc_base >= 1.0 {
        return Err(EvalError::BasePerfect);
    }
    Ok(100.0 * ((1.0 - auc_base) - (1.0 - auc_treat)) / (1.0 - auc_base))
}

/// Relative NE change in percent. Negative is better.
pub fn ne_gain_pct(ne_base: f64, ne_treat: f64) -> f64 {
    100.0 * (ne_treat - ne_base) / ne_base
}

/// Identity of an eval set: users, items and labels in order. Arms built from
/// the same impressions share it regardless of their feature groups.
pub fn eval_fingerprint(eval: &[FeatureBundle]) -> String {
    let mut h = Fnv1a64::new();
    h.write(&(eval.len() as u64).to_le_bytes());
    for b in eval {
        h.write(&b.user_idx.to_le_bytes());
        h.write(&b.item_idx.to_le_bytes());
        h.write(&b.labels);
    }
    format!("{:016x}", h.finish())
}

/// `k` contiguous `[start, end)` ranges covering `0..n`, sizes differing by at
/// most one.
pub fn shard_bounds(n: usize, k: usize) -> Vec<(usize, usize)> {
    let k = k.max(1);
    (0..k).map(|i| (i * n / k, (i + 1) * n / k)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: Task,
    pub auc: f64,
    pub ne: f64,
    pub positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub eval_fingerprint: String,
    pub n_examples: usize,
    pub tasks: Vec<TaskReport>,
    pub mean_auc: f64,
    pub mean_ne: f64,
}

impl MetricReport {
    pub fn compute(name: &str, eval: &[FeatureBundle], preds: &[[f64; NUM_TASKS]]) -> Result<Self, EvalError> {
        if eval.len() != preds.len() {
            return Err(EvalError::LengthMismatch {
                labels: eval.len(),
                scores: preds.len(),
            });
        }
        let mut tasks = Vec::with_capacity(NUM_TASKS);
        for t in Task::ALL {
            let k = t.index();
            let labels: Vec<u8> = eval.iter().map(|b| b.labels[k]).collect();
            let scores: Vec<f64> = preds.iter().map(|p| p[k]).collect();
            tasks.push(TaskReport {
                task: t,
                auc: auc(&labels, &scores)?,
                ne: ne(&labels, &scores)?,
                positives: labels.iter().filter(|&&y| y != 0).count(),
            });
        }
        let n = NUM_TASKS as f64;
        Ok(Self {
            name: name.to_string(),
            eval_fingerprint: eval_fingerprint(eval),
            n_examples: eval.len(),
            mean_auc: tasks.iter().map(|t| t.auc).sum::<f64>() / n,
            mean_ne: tasks.iter().map(|t| t.ne).sum::<f64>() / n,
            tasks,
        })
    }
}

/// Per-task and task-averaged gains of `treat` over `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmGains {
    pub baseline: String,
    pub arm: String,
    pub auc_gain_pct: [f64; NUM_TASKS],
    pub ne_gain_pct: [f64; NUM_TASKS],
    pub mean_auc_gain_pct: f64,
    /// Signed mean NE change, negative is better.
    pub mean_ne_gain_pct: f64,
}

impl ArmGains {
    /// NE improvement as a positive number.
    pub fn mean_ne_reduction_pct(&self) -> f64 {
        -self.mean_ne_gain_pct
    }
}

pub fn gains(base: &MetricReport, treat: &MetricReport) -> Result<ArmGains, EvalError> {
    if base.eval_fingerprint != treat.eval_fingerprint {
        return Err(EvalError::MismatchedEvalSets);
    }
    let mut auc_g = [0.0; NUM_TASKS];
    let mut ne_g = [0.0; NUM_TASKS];
    for (k, (b, t)) in base.tasks.iter().zip(&treat.tasks).enumerate() {
        auc_g[k] = auc_gain_pct(b.auc, t.auc)?;
        ne_g[k] = ne_gain_pct(b.ne, t.ne);
    }
    let n = NUM_TASKS as f64;
    Ok(ArmGains {
        baseline: base.name.clone(),
        arm: treat.name.clone(),
        auc_gain_pct: auc_g,
        ne_gain_pct: ne_g,
        mean_auc_gain_pct: auc_g.iter().sum::<f64>() / n,
        mean_ne_gain_pct: ne_g.iter().sum::<f64>() / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepDiveRow {
    pub task: Task,
    pub base_ne: f64,
    pub treat_ne: f64,
    pub ne_change_pct: f64,
}

/// One row per task with the signed NE change (lower is better).
pub fn deep_dive_report(base: &MetricReport, treat: &MetricReport) -> Result<Vec<DeepDiveRow>, EvalError> {
    if base.eval_fingerprint != treat.eval_fingerprint {
        return Err(EvalError::MismatchedEvalSets);
    }
    Ok(base
        .tasks
        .iter()
        .zip(&treat.tasks)
        .map(|(b, t)| DeepDiveRow {
            task: b.task,
            base_ne: b.ne,
            treat_ne: t.ne,
            ne_change_pct: ne_gain_pct(b.ne, t.ne),
        })
        .collect())
}
