use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

fn pinrank(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pinrank"))
        .args(args)
        .current_dir(dir)
        .env_remove("PINRANK_CONFIG")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// A corpus small enough that the whole pipeline runs in seconds, with one
/// tree per booster and one epoch per network.
fn small_config() -> Value {
    let sgd = json!({ "epochs": 1 });
    json!({
        "seed": 5,
        "corpus": { "n_pins": 400, "n_queries": 12, "n_segments": 2 },
        "simulation": { "n_sessions": 3000 },
        "judgments": { "top_k": 10, "random_k": 10 },
        "models": {
            "gbdt": { "n_trees": 1 },
            "gbrt": { "n_trees": 1 },
            "ranknet": { "sgd": sgd },
            "dnn": { "sgd": sgd },
            "cnn": { "sgd": sgd }
        },
        "stacking": { "gamma_grid": [0.0, 0.5, 1.0] },
        "cascade": { "keep_top": [200, 50, 20] },
        "bench": { "n_queries": 1, "n_candidates": 2000, "reps": 1 }
    })
}

fn write_config(dir: &Path, cfg: &Value) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn validate_accepts_a_good_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_config());
    let o = pinrank(&["--config", &cfg, "validate"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).trim(), "ok");
}

#[test]
fn validate_names_increasing_keep_top_and_unused_keys() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg["cascade"]["keep_top"] = json!([100, 1000, 25]);
    cfg["cascade"]["keep_tops"] = json!(3);
    let path = write_config(dir.path(), &cfg);
    let o = pinrank(&["--config", &path, "validate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let text = stdout(&o);
    assert!(text.contains("strictly decrease"), "{text}");
    assert!(text.contains("unused key: cascade.keep_tops"), "{text}");
}

#[test]
fn unknown_model_kind_lists_the_valid_ones() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg["cascade"]["light_kind"] = json!("forest");
    let path = write_config(dir.path(), &cfg);
    let o = pinrank(&["--config", &path, "validate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let text = stdout(&o);
    assert!(text.contains("forest") && text.contains("ranksvm") && text.contains("gbrt"), "{text}");

    let o = pinrank(&["--seed", "1", "train", "--kind", "forest"], dir.path());
    let err = String::from_utf8_lossy(&o.stderr);
    assert_ne!(o.status.code(), Some(0));
    assert!(err.contains("valid: gbdt, gbrt, ranksvm, ranknet, dnn, cnn, rule"), "{err}");
}

#[test]
fn missing_models_section_fails_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.as_object_mut().unwrap().remove("models");
    let path = write_config(dir.path(), &cfg);
    let out = dir.path().join("out");
    let o = pinrank(&["--config", &path, "--out", out.to_str().unwrap(), "reproduce"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("models"));
    assert!(!out.exists());
}

#[test]
fn stage_commands_chain_through_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_config());
    for cmd in ["gen", "simlog", "labels"] {
        let o = pinrank(&["--config", &cfg, cmd], dir.path());
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let out = dir.path().join("out");
    for f in ["corpus.json", "judgments.jsonl", "log.jsonl", "split.json", "labels_engagement.jsonl", "pairs_relevance.jsonl"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let o = pinrank(&["--config", &cfg, "train", "--kind", "ranksvm"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("models/ranksvm-engagement.json").exists());
}

#[test]
fn small_reproduce_finishes_quickly_and_repeats_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_config());
    let start = Instant::now();
    let o = pinrank(&["--config", &cfg, "--out", "a", "reproduce"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(start.elapsed() < Duration::from_secs(120), "took {:?}", start.elapsed());
    let o = pinrank(&["--config", &cfg, "--out", "b", "reproduce"], dir.path());
    assert!(o.status.success());
    let read = |d: &str| std::fs::read(dir.path().join(d).join("metrics.json")).unwrap();
    assert_eq!(read("a"), read("b"));
    for f in ["cascade.json", "ranked.jsonl", "latency.json", "models/stacked.json"] {
        assert!(dir.path().join("a").join(f).exists(), "missing {f}");
    }
}

#[test]
fn config_path_can_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg["cascade"]["keep_top"] = json!([10, 20, 5]);
    let path = write_config(dir.path(), &cfg);
    let o = Command::new(env!("CARGO_BIN_EXE_pinrank"))
        .arg("validate")
        .current_dir(dir.path())
        .env("PINRANK_CONFIG", &path)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("strictly decrease"));
}
