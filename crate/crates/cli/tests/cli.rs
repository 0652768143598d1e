use std::path::Path;
use std::process::{Command, Output};

fn brace(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brace"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{}: {e}", dir.join(name).display()))
}

const TINY_TRAIN: &str = "\
curriculum = false
episode_budget = 6
warm_start_episodes = 0

[ppo]
batch = 128
minibatch = 64
epochs = 2
";

#[test]
fn verify_theorems_writes_report_and_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let o = brace(&["verify-theorems", "--samples", "1000", "--seed", "1", "--out", "th"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = tmp.path().join("th");
    let report: serde_json::Value = serde_json::from_slice(&read(&dir, "theory_report.json")).unwrap();
    assert_eq!(report["dominance"]["samples"], 1000);
    assert_eq!(report["dominance"]["dominance_violations"], 0);
    let manifest: serde_json::Value = serde_json::from_slice(&read(&dir, "manifest.json")).unwrap();
    assert_eq!(manifest["subcommand"], "verify-theorems");
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = brace(&["frobnicate"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let o = brace(&["eval", "--no-such-flag"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn help_is_available_per_subcommand() {
    let tmp = tempfile::tempdir().unwrap();
    for sub in ["train", "eval", "verify-theorems", "gen-data", "calibrate", "serve", "plotdata"] {
        let o = brace(&[sub, "--help"], tmp.path());
        assert!(o.status.success(), "{sub}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("Usage"), "{sub}");
    }
}

#[test]
fn config_parse_error_reports_line() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.toml"), "curriculum = false\n\n[ppo]\nbatch = \"many\"\n").unwrap();
    let o = brace(&["train", "--config", "bad.toml", "--out", "t"], tmp.path());
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error[config]: bad.toml:4:"), "{err}");
}

#[test]
fn invalid_config_values_exit_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("neg.toml"), "[rewards]\nw_coll = -1.0\n").unwrap();
    let o = brace(&["eval", "--config", "neg.toml", "--out", "e"], tmp.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn runtime_failure_is_one_line_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let o = brace(&["calibrate", "--data", "missing.ndjson", "--out", "c"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error[io]:"), "{err}");
}

#[test]
fn policy_conditions_need_a_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let o = brace(&["eval", "--conditions", "brace", "--episodes", "1", "--out", "e"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--checkpoint"));
}

#[test]
fn gen_data_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = brace(&["gen-data", "--trajectories", "60", "--seed", "4", "--out", out], tmp.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(read(&a, "dataset.ndjson"), read(&b, "dataset.ndjson"));

    let o = brace(&["calibrate", "--data", "a/dataset.ndjson", "--out", "cal"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let cal: serde_json::Value = serde_json::from_slice(&read(&tmp.path().join("cal"), "calibration.json")).unwrap();
    assert!(cal["params"]["beta"].as_f64().unwrap() > 0.0);
}

#[test]
fn identical_manifests_give_identical_training_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("tiny.toml"), TINY_TRAIN).unwrap();
    let run = |out: &str| {
        let o = brace(&["train", "--config", "tiny.toml", "--seed", "9", "--out", out], tmp.path());
        assert!(o.status.success(), "{}", stderr(&o));
        let dir = tmp.path().join(out);
        (read(&dir, "manifest.json"), read(&dir, "train_log.ndjson"), read(&dir, "checkpoint.brck"))
    };
    let first = run("run");
    let second = run("run");
    assert_eq!(first, second);
    let other = run("other");
    assert_eq!(first.1, other.1);
    assert_eq!(first.2, other.2);

    let o = brace(
        &[
            "eval",
            "--checkpoint",
            "run/checkpoint.brck",
            "--conditions",
            "no_assist,fixed_gamma:0,brace,map_sequential,expert_full",
            "--episodes",
            "4",
            "--out",
            "ev",
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let ev = tmp.path().join("ev");
    let table = String::from_utf8(read(&ev, "summary.csv")).unwrap();
    assert_eq!(table.lines().count(), 6);
    let records = String::from_utf8(read(&ev, "episodes.ndjson")).unwrap();
    assert_eq!(records.lines().count(), 20);

    let o = brace(
        &[
            "plotdata",
            "--log",
            "run/train_log.ndjson",
            "--window",
            "2",
            "--checkpoint",
            "run/checkpoint.brck",
            "--episodes",
            "2",
            "--out",
            "plots",
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let plots = tmp.path().join("plots");
    let curve = String::from_utf8(read(&plots, "learning_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 3);
    let heat = String::from_utf8(read(&plots, "gamma_heatmap.csv")).unwrap();
    assert_eq!(heat.lines().count(), 1 + 32 * 24);
    assert!(read(&plots, "manifest.json").len() > 0);
}
