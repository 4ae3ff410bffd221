use std::path::Path;
use std::process::{Command, Output};

fn alab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alab"))
        .args(args)
        .env_remove("ALAB_API_KEY")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn clair(dir: &Path, n: &str) -> String {
    let o = alab(&["build-dataset", "--method", "clair", "--mock", "--n", n, "--out", s(dir)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    dir.join("clair.jsonl").display().to_string()
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = clair(dir.path(), "60");
    let out = s(dir.path());
    for args in [
        vec!["build-dataset", "--method", "nope", "--mock"],
        vec!["build-dataset", "--method", "clair"],
        vec!["train", "--dataset", &data, "--objective", "nope"],
        vec!["train", "--dataset", &data, "--objective", "dpo", "--beta", "-1", "--out", out],
        vec!["train", "--dataset", &data, "--objective", "dpo", "--batch-size", "0", "--out", out],
        vec!["train", "--objective", "dpo", "--out", out],
        vec!["dynamics", "--synthetic", "20", "--objectives", "dpo", "--out", out],
        vec!["dynamics", "--objectives", "dpo,apo-zero", "--out", out],
        vec!["frobnicate"],
    ] {
        let o = alab(&args);
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let missing = dir.path().join("missing.jsonl");
    let out = s(dir.path());
    assert_eq!(code(&alab(&["metrics", "--dataset", s(&empty), "--out", out])), 1);
    assert_eq!(code(&alab(&["metrics", "--dataset", s(&missing), "--out", out])), 1);
    assert_eq!(code(&alab(&["train", "--objective", "dpo", "--dataset", s(&missing), "--out", out])), 1);

    let o = alab(&["gradcheck", "--flip-sign", "--trials", "5", "--policy-trials", "1", "--out", out]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("worst case"), "{err}");
}

#[test]
fn train_writes_named_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = clair(dir.path(), "150");
    let o = alab(&["train", "--dataset", &data, "--objective", "apo-down", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["trajectory.csv", "checkpoint.json", "vocab.json", "manifest.json"] {
        assert!(dir.path().join(format!("apo-down.{f}")).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(dir.path().join("apo-down.trajectory.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    // header, step 0, one row per epoch
    assert_eq!(lines.len(), 1 + 1 + 18);
    assert_eq!(lines[0], "step,epoch,objective,ll_w,ll_l,r_w,r_l,loss");
    assert!(lines[1].starts_with("0,0,apo-down,"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = clair(dir.path(), "150");
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, format!("objective = \"dpo\"\nepochs = 2\nbatch_size = 32\ndataset = {data:?}\n")).unwrap();
    let out = dir.path().join("o");
    let o = alab(&["train", "--config", s(&cfg), "--epochs", "3", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("dpo.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["epochs"], 3);
    assert_eq!(m["config"]["batch_size"], 32);
    assert_eq!(m["config"]["objective"]["kind"], "dpo");
    let csv = std::fs::read_to_string(out.join("dpo.trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 1 + 3);

    std::fs::write(&cfg, "[nested]\nx = 1\n").unwrap();
    assert_eq!(code(&alab(&["gradcheck", "--config", s(&cfg), "--out", s(&out)])), 2);
}

#[test]
fn metrics_prints_summary() {
    let dir = tempfile::tempdir().unwrap();
    let data = clair(dir.path(), "80");
    let o = alab(&["metrics", "--dataset", &data, "--per-pair", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["pairs"], 80);
    assert!(v["jaccard_mean"].as_f64().unwrap() > 0.0);
    let rows = std::fs::read_to_string(dir.path().join("metrics.per-pair.csv")).unwrap();
    assert_eq!(rows.lines().count(), 81);
}

#[test]
fn build_records_drops_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    let o = alab(&["build-dataset", "--method", "judge-on", "--mock", "--n", "40", "--seed", "5", "--out", out]);
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("judge-on-policy.jsonl").exists());
    assert!(dir.path().join("judge-on-policy.drops.jsonl").exists());
    let m: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("build-judge-on-policy.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(m["seeds"]["root"], 5);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 2);

    let o = alab(&[
        "build-dataset", "--method", "clair", "--mock", "--n", "30", "--flip-probability", "0",
        "--length-lo", "0.99", "--length-hi", "1.001", "--out", out,
    ]);
    assert_eq!(code(&o), 0, "identical copies pass a tight ratio filter");

    // pools that cover none of the prompts leave nothing to keep
    let prompts = dir.path().join("prompts.txt");
    std::fs::write(&prompts, "alpha beta\ngamma delta\n").unwrap();
    let pool = dir.path().join("pool.jsonl");
    std::fs::write(&pool, "{\"prompt\":\"other\",\"response\":\"r\",\"model\":\"m\"}\n").unwrap();
    let o = alab(&[
        "build-dataset", "--method", "judge-off", "--mock", "--prompts", s(&prompts),
        "--pool-1", s(&pool), "--pool-2", s(&pool), "--out", out,
    ]);
    assert_eq!(code(&o), 1);
    let drops = std::fs::read_to_string(dir.path().join("judge-off-policy.drops.jsonl")).unwrap();
    assert_eq!(drops.lines().count(), 2);
    assert!(drops.contains("missing-response"));
}
