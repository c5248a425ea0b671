use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::experiment::{ExperimentSummary, Timing};
use super::PipelineError;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(|_| PipelineError::MissingArtifacts(path.to_path_buf()))?;
    Ok(serde_json::from_str(&text)?)
}

fn pct(v: f64) -> String {
    format!("{v:.2}%")
}

/// Renders the summary and deep-dive tables of a finished run. Output depends
/// only on the files in `run_dir`.
pub fn render_reports(run_dir: &Path) -> Result<String, PipelineError> {
    let s: ExperimentSummary = read_json(&run_dir.join("metrics/summary.json"))?;
    let timing: Option<Timing> = read_json(&run_dir.join("timing.json")).ok();
    let mut out = String::new();
    let w = &mut out;

    let _ = writeln!(w, "Run: {} train / {} eval examples, eval set {}", s.n_train, s.n_eval, s.eval_fingerprint);
    let _ = writeln!(
        w,
        "Captions: {} generated, {} skipped by policy, {} failed",
        s.caption_stats.invoked, s.caption_stats.skipped, s.caption_stats.failed
    );
    let _ = writeln!(w);

    let _ = writeln!(w, "Table 1. Offline gains over `{}` (mean over 5 tasks)", s.baseline);
    let _ = writeln!(w, "{:<16} {:<20} {:<14} {:>10} {:>10}", "Model", "Feature Name", "Tokenizer Type", "AUC Gains", "NE Gains");
    for a in &s.arms {
        let (auc, ne) = match &a.gains {
            Some(g) => (pct(g.mean_auc_gain_pct), pct(g.mean_ne_reduction_pct())),
            None => ("-".into(), "-".into()),
        };
        let _ = writeln!(w, "{:<16} {:<20} {:<14} {:>10} {:>10}", a.name, a.feature_name, a.tokenizer, auc, ne);
    }
    let _ = writeln!(w, "AUC Gains: relative reduction of 1-AUC. NE Gains: relative NE reduction (higher is better).");
    let _ = writeln!(w);

    let _ = writeln!(w, "Table 2. Task-level deep dive, `{}` vs `{}` (NE change, lower is better)", s.best_arm, s.baseline);
    let _ = writeln!(w, "{:<22} {:>10}", "Task", "NE Change");
    for r in &s.deep_dive {
        let _ = writeln!(w, "{:<22} {:>10}", r.task.display_name(), pct(r.ne_change_pct));
    }
    let _ = writeln!(w);

    let _ = writeln!(w, "Significance: paired t-test over eval shards (per-shard mean over tasks)");
    let _ = writeln!(w, "{:<16} {:>8} {:>12} {:>12} {:>12} {:>12}", "Model", "shards", "t (AUC)", "p (AUC)", "t (NE)", "p (NE)");
    for a in &s.arms {
        if let (Some(ta), Some(tn)) = (&a.ttest_auc, &a.ttest_ne) {
            let _ = writeln!(
                w,
                "{:<16} {:>8} {:>12.4} {:>12.3e} {:>12.4} {:>12.3e}",
                a.name, ta.n_subsets, ta.t_statistic, ta.p_value, tn.t_statistic, tn.p_value
            );
        }
    }
    let _ = writeln!(w);

    let _ = writeln!(w, "Shuffle importance on `{}` (NE increase when the group is permuted)", s.best_arm);
    let _ = writeln!(w, "{:<6} {:<16} {:>14}", "Rank", "Group", "mean dNE");
    for (i, g) in s.importance.iter().enumerate() {
        let _ = writeln!(w, "{:<6} {:<16} {:>14.6}", i + 1, g.group.name(), g.mean_delta_ne);
    }
    let _ = writeln!(w);

    let _ = writeln!(w, "Token ablation (mean NE, intact vs token groups emptied at predict time)");
    for a in &s.arms {
        if let Some(ab) = &a.ablation {
            let _ = writeln!(
                w,
                "{:<16} {:>10.6} -> {:>10.6} ({:+.6})",
                a.name, ab.intact_mean_ne, ab.ablated_mean_ne, ab.delta_mean_ne
            );
        }
    }

    if s.arms.iter().any(|a| !a.replicates.is_empty() && a.replicates.len() > 1) {
        let _ = writeln!(w);
        let _ = writeln!(w, "Replicates (AUC gain % per training seed)");
        for a in s.arms.iter().filter(|a| !a.replicates.is_empty()) {
            let gains: Vec<String> = a.replicates.iter().map(|r| format!("{:.2}", r.mean_auc_gain_pct)).collect();
            let _ = writeln!(w, "{:<16} {}", a.name, gains.join(" "));
        }
    }

    if let Some(t) = timing {
        let _ = writeln!(w);
        let _ = writeln!(w, "Training throughput (reported, not gated)");
        for a in &s.arms {
            if let Some(at) = t.arms.get(&a.name) {
                let _ = writeln!(
                    w,
                    "{:<16} {:>10.2} us/example {:>8.2}x baseline",
                    a.name,
                    at.seconds_per_example * 1e6,
                    at.ratio_to_baseline
                );
            }
        }
    }
    Ok(out)
}

/// Renders and writes `report.txt`.
pub fn write_report(run_dir: &Path) -> Result<String, PipelineError> {
    let text = render_reports(run_dir)?;
    fs::write(run_dir.join("report.txt"), &text)?;
    Ok(text)
}
