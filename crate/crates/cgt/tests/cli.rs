use std::path::Path;
use std::process::{Command, Output};

fn cgt(run: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgt"))
        .arg("--run-dir")
        .arg(run)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

const TINY: &str = r#"{"seed": 3, "data": {"n_train_val": 12, "n_test": 6}, "train": {"epochs": 1},
 "fuzz": {"n_samples": 4, "n_rounds_stage1": 1, "n_rounds_stage2": 1},
 "eval": {"corruptions": ["pixelate"], "severities": [1]}}"#;

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&cgt(dir.path(), &["no-such-step"])), 2);
    assert_eq!(code(&cgt(dir.path(), &["fuzz", "--metric", "kmnc"])), 2);
    assert_eq!(code(&cgt(dir.path(), &["fuzz", "--alpha-map", "1.5"])), 2);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"sed": 1}"#).unwrap();
    assert_eq!(code(&cgt(dir.path(), &["--config", bad.to_str().unwrap(), "gen-data"])), 2);
}

#[test]
fn missing_artifacts_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = cgt(dir.path(), &["fuzz"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("first"));
    assert_eq!(code(&cgt(dir.path(), &["report"])), 3);
    let garbage = dir.path().join("m.sdnm");
    std::fs::write(&garbage, b"SDNM\x01\x00\x00\x00").unwrap();
    assert_eq!(code(&cgt(dir.path(), &["eval", "--model", garbage.to_str().unwrap()])), 3);
}

#[test]
fn tiny_pipeline_runs_step_by_step() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, TINY).unwrap();
    let c = cfg.to_str().unwrap();
    for step in [
        &["gen-data"][..],
        &["split"],
        &["train-baseline"],
        &["profile"],
        &["gen-adv"],
        &["fuzz", "--metric", "nbc+snac", "--alpha-map", "1"],
    ] {
        let mut args = vec!["--config", c];
        args.extend_from_slice(step);
        let o = cgt(&run, &args);
        assert_eq!(code(&o), 0, "{step:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let cell = "natural_nbc-snac_a1";
    assert!(run.join("cells").join(cell).join("journal.jsonl").exists());
    for step in [&["build-retrain-set", "--cell", cell][..], &["retrain", "--cell", cell]] {
        let mut args = vec!["--config", c];
        args.extend_from_slice(step);
        let o = cgt(&run, &args);
        assert_eq!(code(&o), 0, "{step:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = cgt(&run, &["--config", c, "eval"]);
    assert_eq!(code(&o), 0);
    let scores: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(scores["map_clean"].is_number());
    assert_eq!(scores["corruption"].as_array().unwrap().len(), 1);
}
