use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
    "world": {"n_users": 200, "n_items": 400, "n_impressions": 8000},
    "train": {"epochs": 1, "embed_dim": 8, "hidden": [16]},
    "user_table_size": 128
}"#;

fn mmrec(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmrec"))
        .arg("--config")
        .arg(dir.join("cfg.json"))
        .arg("--out")
        .arg(dir.join("run"))
        .args(args)
        .env_remove("RUST_BACKTRACE")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), SMALL).unwrap();
    dir
}

#[test]
fn config_prints_effective_settings() {
    let dir = setup();
    let text = stdout(&mmrec(dir.path(), &["--seed", "9", "config"]));
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["world"]["n_impressions"], 8000);
    assert_eq!(v["world"]["seed"], 9);
    assert_eq!(v["train"]["seed"], 9);
}

#[test]
fn datagen_writes_world_files() {
    let dir = setup();
    let text = stdout(&mmrec(dir.path(), &["datagen"]));
    assert!(text.contains("8000 impressions"));
    for f in ["manifest.json", "captions.jsonl", "impressions.jsonl", "events.jsonl"] {
        assert!(dir.path().join("run/world").join(f).is_file(), "{f}");
    }
    let first = std::fs::read_to_string(dir.path().join("run/world/captions.jsonl")).unwrap();
    let cap: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert!(cap["text"].as_str().unwrap().starts_with("a "));
}

#[test]
fn train_eval_importance_round_trip() {
    let dir = setup();
    let trained = stdout(&mmrec(dir.path(), &["train", "--arm", "mm_tokens_a"]));
    assert!(trained.starts_with("mm_tokens_a: mean AUC"));
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/metrics/mm_tokens_a.json")).unwrap())
            .unwrap();

    let evaluated: serde_json::Value = serde_json::from_str(&stdout(&mmrec(dir.path(), &["eval", "--arm", "mm_tokens_a"]))).unwrap();
    assert_eq!(evaluated["mean_auc"], metrics["report"]["mean_auc"]);
    assert_eq!(evaluated["tasks"].as_array().unwrap().len(), 5);

    let imp = stdout(&mmrec(dir.path(), &["importance", "--arm", "mm_tokens_a"]));
    assert_eq!(imp.lines().count(), 3);
    assert!(imp.lines().any(|l| l.contains("profile_tokens") && l.contains("+0.000000")));

    let bad = mmrec(dir.path(), &["importance", "--arm", "mm_tokens_a", "--group", "audio"]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("audio"));
}

#[test]
fn experiment_then_report() {
    let dir = setup();
    let printed = stdout(&mmrec(dir.path(), &["experiment"]));
    assert!(printed.contains("Table 1."));
    let report = stdout(&mmrec(dir.path(), &["report"]));
    assert_eq!(printed, report);
}

#[test]
fn unknown_arm_and_missing_run_fail_cleanly() {
    let dir = setup();
    assert!(!mmrec(dir.path(), &["train", "--arm", "nope"]).status.success());
    let missing = mmrec(dir.path(), &["report"]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("missing run artifact"));
}
