use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ArmConfig, CaptionerSpec, ExperimentConfig, TokenizerSpec};
use super::PipelineError;
use crate::content::{Caption, GatedCaptioner, RemoteCaptioner, SyntheticCaptioner};
use crate::datagen::{gen_interactions, gen_world, positive_rates, Interactions, World, WorldManifest};
use crate::eval::{
    self, deep_dive_report, gains, paired_ttest, rank_importance, shard_bounds, shuffle_importance, ArmGains,
    DeepDiveRow, GroupImportance, MetricReport, SignificanceResult,
};
use crate::features::{assemble, split_indices, AssembleConfig, DatasetSplit, FeatureBundle, FeatureGroup, SplitIndices};
use crate::profile::profile_snapshots;
use crate::ranker::{predict_parallel, save_checkpoint, train, ModelParams, ModelShape, TrainLog};
use crate::task::{Task, NUM_TASKS};
use crate::tokenize::{normalize, NormalizedText, TokenIdList, Tokenizer};

/// Split seeds are derived from the world seed so one `--seed` moves all.
const SPLIT_SEED_SALT: u64 = 0x5eed_0000_0000_0001;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionStats {
    pub invoked: usize,
    pub skipped: usize,
    pub failed: usize,
}

struct TokenSet {
    spec: TokenizerSpec,
    tokenizer: Tokenizer,
    items: Vec<TokenIdList>,
    profiles: Option<Vec<[TokenIdList; NUM_TASKS]>>,
}

/// World, captions and split shared by every arm.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub world: World,
    pub interactions: Interactions,
    pub captions: Vec<Option<Caption>>,
    pub caption_stats: CaptionStats,
    pub split: SplitIndices,
    normalized: Vec<NormalizedText>,
    token_sets: Vec<TokenSet>,
}

/// Train/eval bundles and model shape for one arm.
pub struct ArmData {
    pub split: DatasetSplit,
    pub shape: ModelShape,
    pub tokenizer_label: String,
}

fn caption_all<C: crate::content::Captioner>(
    world: &World,
    gated: &GatedCaptioner<C>,
) -> (Vec<Option<Caption>>, CaptionStats) {
    let mut stats = CaptionStats::default();
    let captions = world
        .items
        .iter()
        .map(|item| match gated.caption_if_eligible(item) {
            Ok(Some(c)) => {
                stats.invoked += 1;
                Some(c)
            }
            Ok(None) => {
                stats.skipped += 1;
                None
            }
            Err(_) => {
                stats.failed += 1;
                None
            }
        })
        .collect();
    (captions, stats)
}

/// Generates the world, captions every eligible item and fixes the split.
pub fn prepare(config: &ExperimentConfig) -> Result<Prepared, PipelineError> {
    config.validate()?;
    let world = gen_world(&config.world)?;
    let interactions = gen_interactions(&world);
    let (captions, caption_stats) = match &config.captioner {
        CaptionerSpec::Synthetic => {
            let inner = SyntheticCaptioner::new(world.truth.clone(), config.world.start_ts);
            caption_all(&world, &GatedCaptioner::new(config.invocation, inner)?)
        }
        CaptionerSpec::Remote(remote) => {
            let inner = RemoteCaptioner::new(remote.clone());
            caption_all(&world, &GatedCaptioner::new(config.invocation, inner)?)
        }
    };
    let normalized = captions
        .iter()
        .map(|c| c.as_ref().map(|c| normalize(&c.text)).unwrap_or_default())
        .collect();
    let split = split_indices(
        interactions.impressions.len(),
        config.split,
        config.world.seed ^ SPLIT_SEED_SALT,
    )?;
    Ok(Prepared {
        config: config.clone(),
        world,
        interactions,
        captions,
        caption_stats,
        split,
        normalized,
        token_sets: Vec::new(),
    })
}

impl Prepared {
    fn token_set(&mut self, spec: &TokenizerSpec, with_profiles: bool) -> Result<&TokenSet, PipelineError> {
        let pos = match self.token_sets.iter().position(|t| &t.spec == spec) {
            Some(p) => p,
            None => {
                let corpus: Vec<NormalizedText> = self.normalized.iter().filter(|n| !n.is_empty()).cloned().collect();
                let tokenizer = spec.build(&corpus)?;
                let items = self.normalized.iter().map(|n| tokenizer.tokenize(n)).collect();
                self.token_sets.push(TokenSet {
                    spec: spec.clone(),
                    tokenizer,
                    items,
                    profiles: None,
                });
                self.token_sets.len() - 1
            }
        };
        if with_profiles && self.token_sets[pos].profiles.is_none() {
            let set = &self.token_sets[pos];
            let empty = TokenIdList::default();
            let lookup = |id: u64| set.items.get(id as usize).unwrap_or(&empty);
            let profiles = profile_snapshots(
                &self.interactions.impressions,
                &self.interactions.events,
                lookup,
                self.config.eval.profile_half_life_s,
                self.config.eval.topk_profile,
            )?;
            self.token_sets[pos].profiles = Some(profiles);
        }
        Ok(&self.token_sets[pos])
    }

    /// Tokenizer used by `arm`, or `None` when the arm has no token groups.
    pub fn tokenizer(&mut self, arm: &ArmConfig) -> Result<Option<&Tokenizer>, PipelineError> {
        if !arm.uses_tokens() {
            return Ok(None);
        }
        let spec = self.config.tokenizer_for(arm).clone();
        Ok(Some(&self.token_set(&spec, false)?.tokenizer))
    }

    pub fn arm_data(&mut self, arm: &ArmConfig) -> Result<ArmData, PipelineError> {
        let with_items = arm.groups.contains(FeatureGroup::ItemTokens);
        let with_profiles = arm.groups.contains(FeatureGroup::ProfileTokens);
        let spec = self.config.tokenizer_for(arm).clone();
        let acfg = AssembleConfig {
            user_table_size: self.config.user_table_size,
            item_table_size: self.config.item_table_size,
            item_tokens: with_items,
            profile_tokens: with_profiles,
        };
        let (id_space, label) = if arm.uses_tokens() {
            let set = self.token_set(&spec, with_profiles)?;
            (set.tokenizer.id_space(), set.tokenizer.label().to_string())
        } else {
            (1, "-".to_string())
        };
        let set = if arm.uses_tokens() {
            self.token_sets.iter().find(|t| t.spec == spec)
        } else {
            None
        };

        let impressions = &self.interactions.impressions;
        let build = |idx: &[usize]| -> Result<Vec<FeatureBundle>, PipelineError> {
            idx.iter()
                .map(|&i| {
                    let imp = &impressions[i];
                    let item = &self.world.items[imp.item_id as usize];
                    let tokens = set.map(|s| &s.items[imp.item_id as usize]);
                    let profile = set.and_then(|s| s.profiles.as_ref()).map(|p| &p[i]);
                    Ok(assemble(imp.user_id, item, tokens, profile, &imp.labels, &acfg)?)
                })
                .collect()
        };
        let split = DatasetSplit {
            train: build(&self.split.train)?,
            eval: build(&self.split.eval)?,
            indices: self.split.clone(),
        };
        let token_rows = |g| if arm.groups.contains(g) { id_space } else { 1 };
        let shape = self.config.train.shape(
            self.config.world.visual_dim,
            [
                self.config.user_table_size,
                self.config.item_table_size,
                token_rows(FeatureGroup::ItemTokens),
                token_rows(FeatureGroup::ProfileTokens),
            ],
        );
        Ok(ArmData {
            split,
            shape,
            tokenizer_label: label,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub intact_mean_ne: f64,
    pub ablated_mean_ne: f64,
    /// `ablated - intact`; positive means the tokens were helping.
    pub delta_mean_ne: f64,
}

/// Eval set with both token groups emptied.
pub fn ablate_tokens(eval: &[FeatureBundle]) -> Vec<FeatureBundle> {
    eval.iter()
        .map(|b| FeatureBundle {
            item_tokens: TokenIdList::default(),
            profile_tokens: Default::default(),
            ..b.clone()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateGain {
    pub seed: u64,
    pub mean_auc_gain_pct: f64,
    pub mean_ne_gain_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub name: String,
    pub feature_name: String,
    pub tokenizer: String,
    pub groups: crate::ranker::GroupSet,
    pub mean_auc: f64,
    pub mean_ne: f64,
    /// Absent for the baseline itself.
    pub gains: Option<ArmGains>,
    /// Paired t-test on per-shard mean AUC.
    pub ttest_auc: Option<SignificanceResult>,
    /// Paired t-test on per-shard mean NE.
    pub ttest_ne: Option<SignificanceResult>,
    pub ablation: Option<AblationResult>,
    pub replicates: Vec<ReplicateGain>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub baseline: String,
    pub n_train: usize,
    pub n_eval: usize,
    pub eval_fingerprint: String,
    pub positive_rates: [f64; NUM_TASKS],
    pub caption_stats: CaptionStats,
    pub arms: Vec<ArmSummary>,
    /// Lowest mean NE among non-baseline arms.
    pub best_arm: String,
    pub deep_dive: Vec<DeepDiveRow>,
    /// Shuffle importance on the best arm, most important first.
    pub importance: Vec<GroupImportance>,
}

impl ExperimentSummary {
    pub fn arm(&self, name: &str) -> Option<&ArmSummary> {
        self.arms.iter().find(|a| a.name == name)
    }
}

/// Per-arm artifact under `metrics/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmMetrics {
    pub arm: ArmConfig,
    pub tokenizer: String,
    pub report: MetricReport,
    pub train_log: TrainLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmTiming {
    pub train_seconds: f64,
    pub examples: u64,
    pub seconds_per_example: f64,
    pub ratio_to_baseline: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub arms: BTreeMap<String, ArmTiming>,
}

fn shard_means(eval: &[FeatureBundle], preds: &[[f64; NUM_TASKS]], k: usize) -> Result<Vec<(f64, f64)>, PipelineError> {
    let mut out = Vec::with_capacity(k);
    for (lo, hi) in shard_bounds(eval.len(), k) {
        let (mut auc_sum, mut ne_sum, mut n) = (0.0, 0.0, 0usize);
        for t in Task::ALL {
            let j = t.index();
            let labels: Vec<u8> = eval[lo..hi].iter().map(|b| b.labels[j]).collect();
            let scores: Vec<f64> = preds[lo..hi].iter().map(|p| p[j]).collect();
            // Tasks with a single-class shard are skipped for both arms alike.
            if let (Ok(a), Ok(e)) = (eval::auc(&labels, &scores), eval::ne(&labels, &scores)) {
                auc_sum += a;
                ne_sum += e;
                n += 1;
            }
        }
        if n == 0 {
            return Err(eval::EvalError::DegenerateLabels.into());
        }
        out.push((auc_sum / n as f64, ne_sum / n as f64));
    }
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, values: impl IntoIterator<Item = T>) -> Result<(), PipelineError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for v in values {
        serde_json::to_writer(&mut out, &v)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Writes the world manifest, captions and (optionally) raw logs.
pub fn write_world(prepared: &Prepared, dir: &Path, with_logs: bool) -> Result<(), PipelineError> {
    fs::create_dir_all(dir)?;
    let manifest = WorldManifest::new(&prepared.world.config, Some(&prepared.interactions));
    write_json(&dir.join("manifest.json"), &manifest)?;
    write_jsonl(&dir.join("captions.jsonl"), prepared.captions.iter().flatten())?;
    if with_logs {
        write_jsonl(&dir.join("impressions.jsonl"), &prepared.interactions.impressions)?;
        crate::profile::save_event_log(&prepared.interactions.events, dir.join("events.jsonl"))?;
    }
    Ok(())
}

struct Trained {
    params: ModelParams,
    log: TrainLog,
    preds: Vec<[f64; NUM_TASKS]>,
    report: MetricReport,
}

fn train_and_score(arm: &ArmConfig, data: &ArmData, config: &ExperimentConfig, seed: u64) -> Result<Trained, PipelineError> {
    let tcfg = crate::ranker::TrainConfig {
        seed,
        enabled_groups: arm.groups,
        ..config.train.clone()
    };
    let (params, log) = train(&data.split, data.shape.clone(), &tcfg).map_err(|source| PipelineError::ArmFailed {
        arm: arm.name.clone(),
        source,
    })?;
    let preds = predict_parallel(&data.split.eval, &params)?;
    let report = MetricReport::compute(&arm.name, &data.split.eval, &preds)?;
    Ok(Trained {
        params,
        log,
        preds,
        report,
    })
}

fn mark_partial(metrics_dir: &Path, err: &PipelineError) {
    let _ = fs::write(metrics_dir.join("PARTIAL"), format!("{err}\n"));
}

/// Runs every arm and writes the run directory. On an arm failure the
/// metrics written so far are kept and `metrics/PARTIAL` names the error.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<ExperimentSummary, PipelineError> {
    let metrics_dir = out.join("metrics");
    fs::create_dir_all(&metrics_dir)?;
    let _ = fs::remove_file(metrics_dir.join("PARTIAL"));
    match run_inner(config, out) {
        Ok(s) => Ok(s),
        Err(e) => {
            mark_partial(&metrics_dir, &e);
            Err(e)
        }
    }
}

fn run_inner(config: &ExperimentConfig, out: &Path) -> Result<ExperimentSummary, PipelineError> {
    let mut prepared = prepare(config)?;
    let cfg = prepared.config.clone();
    for d in ["world", "datasets", "checkpoints", "metrics"] {
        fs::create_dir_all(out.join(d))?;
    }
    write_world(&prepared, &out.join("world"), cfg.write_datasets)?;
    write_json(&out.join("datasets/split.json"), &prepared.split)?;

    let seeds: Vec<u64> = (0..cfg.replicates as u64).map(|r| cfg.train.seed.wrapping_add(r)).collect();
    let base_cfg = cfg.arm(&cfg.baseline)?.clone();
    let mut order = vec![base_cfg.clone()];
    order.extend(cfg.arms.iter().filter(|a| a.name != cfg.baseline).cloned());

    let mut base_reports: Vec<MetricReport> = Vec::new();
    let mut base_shards: Vec<(f64, f64)> = Vec::new();
    let mut summaries: Vec<ArmSummary> = Vec::new();
    let mut timing = Timing { arms: BTreeMap::new() };
    let mut best: Option<(f64, String, ModelParams, Vec<FeatureBundle>)> = None;
    let mut base_eval_fp = String::new();
    let (mut n_train, mut n_eval) = (0, 0);

    for arm in &order {
        let is_base = arm.name == cfg.baseline;
        let data = prepared.arm_data(arm)?;
        n_train = data.split.train.len();
        n_eval = data.split.eval.len();
        if cfg.write_datasets {
            let dir = out.join("datasets").join(&arm.name);
            fs::create_dir_all(&dir)?;
            crate::features::save_dataset(&data.split.train, dir.join("train.jsonl"))?;
            crate::features::save_dataset(&data.split.eval, dir.join("eval.jsonl"))?;
        }

        let main = train_and_score(arm, &data, &cfg, seeds[0])?;
        if cfg.write_checkpoints {
            save_checkpoint(&main.params, out.join("checkpoints").join(format!("{}.smrk", arm.name)))?;
        }
        write_json(
            &metrics_dir_file(out, &arm.name),
            &ArmMetrics {
                arm: arm.clone(),
                tokenizer: data.tokenizer_label.clone(),
                report: main.report.clone(),
                train_log: main.log.clone(),
            },
        )?;
        let shards = shard_means(&data.split.eval, &main.preds, cfg.eval.n_ttest_subsets)?;

        let ablation = if arm.uses_tokens() {
            let ablated_set = ablate_tokens(&data.split.eval);
            let ablated = MetricReport::compute(&arm.name, &ablated_set, &predict_parallel(&ablated_set, &main.params)?)?;
            Some(AblationResult {
                intact_mean_ne: main.report.mean_ne,
                ablated_mean_ne: ablated.mean_ne,
                delta_mean_ne: ablated.mean_ne - main.report.mean_ne,
            })
        } else {
            None
        };

        let mut replicate_reports = vec![main.report.clone()];
        for &seed in &seeds[1..] {
            replicate_reports.push(train_and_score(arm, &data, &cfg, seed)?.report);
        }

        let (gain, ttest_auc, ttest_ne, replicates) = if is_base {
            base_eval_fp = main.report.eval_fingerprint.clone();
            base_shards = shards;
            base_reports = replicate_reports;
            (None, None, None, Vec::new())
        } else {
            let g = gains(&base_reports[0], &main.report)?;
            let auc_pairs: Vec<(f64, f64)> = base_shards.iter().zip(&shards).map(|(b, t)| (b.0, t.0)).collect();
            let ne_pairs: Vec<(f64, f64)> = base_shards.iter().zip(&shards).map(|(b, t)| (b.1, t.1)).collect();
            let reps = seeds
                .iter()
                .zip(base_reports.iter().zip(&replicate_reports))
                .map(|(&seed, (b, t))| {
                    gains(b, t).map(|g| ReplicateGain {
                        seed,
                        mean_auc_gain_pct: g.mean_auc_gain_pct,
                        mean_ne_gain_pct: g.mean_ne_gain_pct,
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            (Some(g), Some(paired_ttest(&auc_pairs)?), Some(paired_ttest(&ne_pairs)?), reps)
        };

        timing.arms.insert(
            arm.name.clone(),
            ArmTiming {
                train_seconds: main.log.train_seconds,
                examples: main.log.examples_seen,
                seconds_per_example: main.log.seconds_per_example(),
                ratio_to_baseline: 0.0,
            },
        );

        let better = !is_base && best.as_ref().is_none_or(|b| main.report.mean_ne < b.0);
        if better || (is_base && cfg.arms.len() == 1) {
            best = Some((main.report.mean_ne, arm.name.clone(), main.params, data.split.eval));
        }

        summaries.push(ArmSummary {
            name: arm.name.clone(),
            feature_name: arm.feature_name.clone(),
            tokenizer: data.tokenizer_label,
            groups: arm.groups,
            mean_auc: main.report.mean_auc,
            mean_ne: main.report.mean_ne,
            gains: gain,
            ttest_auc,
            ttest_ne,
            ablation,
            replicates,
        });
    }

    let base_spe = timing.arms[&cfg.baseline].seconds_per_example;
    for t in timing.arms.values_mut() {
        t.ratio_to_baseline = if base_spe > 0.0 { t.seconds_per_example / base_spe } else { 0.0 };
    }
    write_json(&out.join("timing.json"), &timing)?;

    let (_, best_name, best_params, best_eval) = best.expect("at least the baseline arm ran");
    let base_report: MetricReport = read_arm_report(out, &cfg.baseline)?;
    let best_report: MetricReport = read_arm_report(out, &best_name)?;
    let deep_dive = deep_dive_report(&base_report, &best_report)?;
    let importance = rank_importance(
        FeatureGroup::ALL
            .iter()
            .map(|&g| shuffle_importance(&best_params, &best_eval, g, cfg.eval.importance_seed))
            .collect::<Result<Vec<_>, _>>()?,
    );

    // Arms reordered back to config order for reporting.
    summaries.sort_by_key(|s| cfg.arms.iter().position(|a| a.name == s.name));
    let summary = ExperimentSummary {
        baseline: cfg.baseline.clone(),
        n_train,
        n_eval,
        eval_fingerprint: base_eval_fp,
        positive_rates: positive_rates(&prepared.interactions.impressions),
        caption_stats: prepared.caption_stats,
        arms: summaries,
        best_arm: best_name,
        deep_dive,
        importance,
    };
    write_json(&out.join("metrics/summary.json"), &summary)?;
    super::report::write_report(out)?;
    Ok(summary)
}

fn metrics_dir_file(out: &Path, arm: &str) -> std::path::PathBuf {
    out.join("metrics").join(format!("{arm}.json"))
}

fn read_arm_report(out: &Path, arm: &str) -> Result<MetricReport, PipelineError> {
    let path = metrics_dir_file(out, arm);
    let text = fs::read_to_string(&path).map_err(|_| PipelineError::MissingArtifacts(path))?;
    Ok(serde_json::from_str::<ArmMetrics>(&text)?.report)
}
