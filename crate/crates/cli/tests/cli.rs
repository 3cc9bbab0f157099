use std::path::Path;
use std::process::{Command, Output};

fn dyad(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dyad"));
    cmd.args(args).env_remove("DYAD_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("run dyad")
}

fn ok(args: &[&str]) -> String {
    let out = dyad(args, &[]);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: [&str; 8] = [
    "--videos",
    "3",
    "--frames-per-video",
    "48",
    "--segments-per-video",
    "12",
    "--anomaly-rate",
    "0.25",
];

fn small_dataset(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("data");
    let mut args = vec!["synth", "--out", p(&data)];
    args.extend(SMALL);
    let line = ok(&args);
    assert!(line.starts_with("synth: 3 videos x 12 segments, 9 anomalous"), "{line}");
    data.join("manifest.json")
}

fn chain(manifest: &Path, work: &Path) {
    let common = ["--segments", "12", "--passes", "3", "-w", p(work)];
    let with = |cmd: &[&str]| {
        let mut a: Vec<&str> = cmd.to_vec();
        a.extend(common);
        ok(&a)
    };
    assert!(with(&["features", "--manifest", p(manifest)]).starts_with("features: 36 segments"));
    assert!(with(&["pseudo"]).starts_with("pseudo: 36 segments"));
    assert!(with(&["train"]).starts_with("train: 3 passes"));
    assert!(with(&["score"]).starts_with("score: 36 segments"));
    assert!(with(&["eval", "--manifest", p(manifest)]).starts_with("eval: 144 frames"));
}

#[test]
fn full_chain_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path());
    let work = dir.path().join("work");
    chain(&manifest, &work);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(work.join("eval/summary.json")).unwrap()).unwrap();
    let auc = summary["auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    for f in ["segments.csv", "dynamicity.csv", "pseudo_scores.csv", "bags.csv", "iforest.psm1", "hypersphere.psm1"] {
        assert!(work.join(f).exists(), "{f}");
    }
    for f in ["ensemble.json", "initial_bags.csv", "pass_1/omega.mlp1", "pass_3/psi.mlp1", "pass_2/bags.csv"] {
        assert!(work.join("ensemble").join(f).exists(), "{f}");
    }
    assert!(work.join("eval/roc.csv").exists());
    assert!(work.join("eval/frames.csv").exists());
}

#[test]
fn eval_without_scores_fails_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let out = dyad(&["eval", "-w", p(dir.path()), "--manifest", "nowhere.json"], &[]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing scores"));
}

#[test]
fn missing_upstream_artifacts_fail() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["pseudo", "train", "score"] {
        let out = dyad(&[cmd, "-w", p(dir.path())], &[]);
        assert!(!out.status.success(), "{cmd}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("missing"), "{cmd}");
    }
}

#[test]
fn rerunning_train_rewrites_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path());
    let work = dir.path().join("work");
    chain(&manifest, &work);
    let read = || {
        ["ensemble.json", "pass_3/omega.mlp1", "pass_3/psi.mlp1", "pass_3/bags.csv"]
            .map(|f| std::fs::read(work.join("ensemble").join(f)).unwrap())
    };
    let before = read();
    ok(&["train", "--segments", "12", "--passes", "3", "-w", p(&work)]);
    assert_eq!(read(), before);
}

#[test]
fn same_seed_gives_identical_dataset() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let mut args = vec!["synth", "--seed", "5", "--out"];
        let out = dir.path().join(name);
        args.push(p(&out));
        args.extend(SMALL);
        ok(&args);
    }
    for f in ["videos/video_000.gv8", "videos/video_002.gv8", "gt/video_001.txt", "manifest.json"] {
        assert_eq!(std::fs::read(dir.path().join("a").join(f)).unwrap(), std::fs::read(dir.path().join("b").join(f)).unwrap());
    }
}

#[test]
fn config_round_trips_through_print_config() {
    let dir = tempfile::tempdir().unwrap();
    let first = ok(&["train", "--print-config", "--passes", "4", "--scorer", "lof", "--tau", "0.4", "--no-dynamicity"]);
    let path = dir.path().join("config.json");
    std::fs::write(&path, &first).unwrap();
    let second = ok(&["train", "--print-config", "--config", p(&path)]);
    assert_eq!(first, second);
    let cfg: serde_json::Value = serde_json::from_str(&second).unwrap();
    assert_eq!(cfg["scorer"], "lof");
    assert_eq!(cfg["use_dynamicity"], false);
}

#[test]
fn config_validation_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"passes": 2, "bogus": 1}"#).unwrap();
    let out = dyad(&["pseudo", "--config", p(&path), "--print-config"], &[]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
    let out = dyad(&["pseudo", "--tau", "1.5", "--print-config"], &[]);
    assert!(!out.status.success());
}

#[test]
fn seed_precedence_flag_then_file_then_env() {
    let dir = tempfile::tempdir().unwrap();
    let seed_of = |out: Output| -> u64 {
        assert!(out.status.success());
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        v["seed"].as_u64().unwrap()
    };
    assert_eq!(seed_of(dyad(&["score", "--print-config"], &[])), 0);
    assert_eq!(seed_of(dyad(&["score", "--print-config"], &[("DYAD_SEED", "41")])), 41);
    let path = dir.path().join("c.json");
    std::fs::write(&path, r#"{"seed": 12}"#).unwrap();
    assert_eq!(seed_of(dyad(&["score", "--print-config", "--config", p(&path)], &[("DYAD_SEED", "41")])), 12);
    assert_eq!(
        seed_of(dyad(&["score", "--print-config", "--config", p(&path), "--seed", "3"], &[("DYAD_SEED", "41")])),
        3
    );
    let out = dyad(&["score", "--print-config"], &[("DYAD_SEED", "abc")]);
    assert!(!out.status.success());
}
