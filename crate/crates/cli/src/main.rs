//! `mmrec`: generate worlds, train arms, evaluate and render reports.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use mmrec::eval::{rank_importance, shuffle_importance, EvalError, MetricReport};
use mmrec::features::FeatureGroup;
use mmrec::pipeline::{self, ArmMetrics, ExperimentConfig};
use mmrec::ranker::{load_checkpoint, predict_parallel, save_checkpoint, train, TrainConfig};

#[derive(Parser)]
#[command(name = "mmrec", version, about = "Caption-derived token features for multi-task ranking")]
struct Cli {
    /// Experiment config (JSON). Defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the world, split and training seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic world, captions, impressions and event log.
    Datagen,
    /// Train one arm and write its checkpoint and metrics.
    Train {
        #[arg(long)]
        arm: String,
    },
    /// Score a checkpoint on its arm's eval split.
    Eval {
        #[arg(long)]
        arm: String,
        /// Defaults to `<out>/checkpoints/<arm>.smrk`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run every arm, significance tests, importance and ablation.
    Experiment,
    /// Shuffle feature importance for a trained arm.
    Importance {
        #[arg(long)]
        arm: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// One group (visual, item_tokens, profile_tokens); all when omitted.
        #[arg(long)]
        group: Option<String>,
    },
    /// Render the tables of a finished run.
    Report,
    /// Print the effective config as JSON.
    Config,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    Ok(match cli.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn checkpoint_path(out: &Path, arm: &str, explicit: &Option<PathBuf>) -> PathBuf {
    explicit
        .clone()
        .unwrap_or_else(|| out.join("checkpoints").join(format!("{arm}.smrk")))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = load_config(&cli)?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::Config => println!("{}", serde_json::to_string_pretty(&cfg)?),
        Command::Datagen => {
            let prepared = pipeline::prepare(&cfg)?;
            pipeline::write_world(&prepared, &out.join("world"), true)?;
            let rates = mmrec::datagen::positive_rates(&prepared.interactions.impressions);
            println!(
                "wrote {} items, {} impressions, {} events to {}",
                prepared.world.items.len(),
                prepared.interactions.impressions.len(),
                prepared.interactions.events.len(),
                out.join("world").display()
            );
            for t in mmrec::Task::ALL {
                println!("  {:<22} positive rate {:.4}", t.display_name(), rates[t.index()]);
            }
        }
        Command::Train { arm } => {
            let arm_cfg = cfg.arm(arm)?.clone();
            let mut prepared = pipeline::prepare(&cfg)?;
            let data = prepared.arm_data(&arm_cfg)?;
            let tcfg = TrainConfig {
                enabled_groups: arm_cfg.groups,
                ..cfg.train.clone()
            };
            let (params, log) = train(&data.split, data.shape.clone(), &tcfg)?;
            std::fs::create_dir_all(out.join("checkpoints"))?;
            std::fs::create_dir_all(out.join("metrics"))?;
            let ckpt = checkpoint_path(out, arm, &None);
            save_checkpoint(&params, &ckpt)?;
            let report = MetricReport::compute(arm, &data.split.eval, &predict_parallel(&data.split.eval, &params)?)?;
            let metrics = ArmMetrics {
                arm: arm_cfg,
                tokenizer: data.tokenizer_label,
                report,
                train_log: log,
            };
            std::fs::write(
                out.join("metrics").join(format!("{arm}.json")),
                serde_json::to_string_pretty(&metrics)? + "\n",
            )?;
            println!(
                "{arm}: mean AUC {:.6}, mean NE {:.6}, checkpoint {}",
                metrics.report.mean_auc,
                metrics.report.mean_ne,
                ckpt.display()
            );
        }
        Command::Eval { arm, checkpoint } => {
            let arm_cfg = cfg.arm(arm)?.clone();
            let params = load_checkpoint(checkpoint_path(out, arm, checkpoint))?;
            let mut prepared = pipeline::prepare(&cfg)?;
            let data = prepared.arm_data(&arm_cfg)?;
            let report = MetricReport::compute(arm, &data.split.eval, &predict_parallel(&data.split.eval, &params)?)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Experiment => {
            pipeline::run_experiment(&cfg, out)?;
            print!("{}", std::fs::read_to_string(out.join("report.txt"))?);
        }
        Command::Importance { arm, checkpoint, group } => {
            let groups = match group {
                Some(g) => match FeatureGroup::parse(g) {
                    Some(g) => vec![g],
                    None => bail!(EvalError::UnknownFeatureGroup(g.clone())),
                },
                None => FeatureGroup::ALL.to_vec(),
            };
            let arm_cfg = cfg.arm(arm)?.clone();
            let params = load_checkpoint(checkpoint_path(out, arm, checkpoint))?;
            let mut prepared = pipeline::prepare(&cfg)?;
            let data = prepared.arm_data(&arm_cfg)?;
            let ranked = rank_importance(
                groups
                    .into_iter()
                    .map(|g| shuffle_importance(&params, &data.split.eval, g, cfg.eval.importance_seed))
                    .collect::<Result<Vec<_>, _>>()?,
            );
            for (i, g) in ranked.iter().enumerate() {
                println!("{} {:<16} mean dNE {:+.6}", i + 1, g.group.name(), g.mean_delta_ne);
            }
        }
        Command::Report => print!("{}", pipeline::write_report(out)?),
    }
    Ok(())
}
