use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ivos(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ivos"))
        .args(args)
        .output()
        .unwrap()
}

fn synth(dir: &Path, index: usize) -> std::path::PathBuf {
    let out = ivos(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--index",
        &index.to_string(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let seq = dir.join(String::from_utf8(out.stdout).unwrap().trim());
    assert_eq!(fs::read_dir(seq.join("JPEGImages")).unwrap().count(), 10);
    assert_eq!(fs::read_dir(seq.join("Annotations")).unwrap().count(), 10);
    seq
}

#[test]
fn eval_writes_rounds_seeds_and_plots() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = synth(tmp.path(), 4);
    let out = tmp.path().join("eval");
    let run = ivos(&[
        "eval",
        "--sequence",
        seq.to_str().unwrap(),
        "--rounds",
        "3",
        "--seeds",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert!(stdout.contains("AUC-J"), "{stdout}");
    assert!(stdout.contains("mean J per round:"));

    let summary: Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let runs = summary["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 2);
    assert!(runs.iter().all(|r| r["j"].as_array().unwrap().len() == 3));
    assert_eq!(summary["mean_j"].as_array().unwrap().len(), 3);
    let rows = fs::read_to_string(out.join("rounds.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 2 * 3);
    let name = seq.file_name().unwrap();
    for seed in 0..2 {
        for round in 1..=3 {
            let dir = out
                .join(name)
                .join(format!("seed_{seed}"))
                .join(format!("round_{round:02}"));
            assert!(dir.join("00000.png").is_file());
            assert!(dir.join("metrics.csv").is_file());
        }
    }
    for plot in ["curve_j.svg", "curve_f.svg"] {
        assert!(fs::read_to_string(out.join(plot))
            .unwrap()
            .contains("<polyline"));
    }

    // A repeat run with the same seeds reproduces the table exactly.
    let again = tmp.path().join("again");
    let rerun = ivos(&[
        "eval",
        "--sequence",
        seq.to_str().unwrap(),
        "--rounds",
        "3",
        "--seeds",
        "2",
        "--out",
        again.to_str().unwrap(),
    ]);
    assert!(rerun.status.success());
    assert_eq!(fs::read_to_string(again.join("rounds.csv")).unwrap(), rows);
}

#[test]
fn single_round_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = synth(tmp.path(), 0);
    let out = tmp.path().join("eval");
    let run = ivos(&[
        "eval",
        "--sequence",
        seq.to_str().unwrap(),
        "--rounds",
        "1",
        "--seeds",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["mean_j"].as_array().unwrap().len(), 1);
    assert_eq!(summary["auc_j"], summary["mean_j"][0]);
}

#[test]
fn eval_without_ground_truth_fails_naming_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = synth(tmp.path(), 0);
    fs::remove_dir_all(seq.join("Annotations")).unwrap();
    let run = ivos(&[
        "eval",
        "--sequence",
        seq.to_str().unwrap(),
        "--out",
        tmp.path().join("e").to_str().unwrap(),
    ]);
    assert!(!run.status.success());
    let stderr = String::from_utf8(run.stderr).unwrap();
    assert!(
        stderr.contains(seq.join("Annotations").to_str().unwrap()),
        "{stderr}"
    );
}

#[test]
fn bad_config_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[robot]\nround = 3\n").unwrap();
    let run = ivos(&[
        "--config",
        cfg.to_str().unwrap(),
        "synth",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(!run.status.success());
    assert!(String::from_utf8(run.stderr).unwrap().contains("bad.toml"));
}

#[test]
fn calibrate_writes_params_consumed_by_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = synth(tmp.path(), 5);
    let cfg = tmp.path().join("cfg.toml");
    fs::write(&cfg, "[calibration]\nminisequences = 2\nseed = 3\n").unwrap();
    let params = tmp.path().join("params.toml");
    let run = ivos(&[
        "--config",
        cfg.to_str().unwrap(),
        "calibrate",
        "--sequence",
        seq.to_str().unwrap(),
        "--iterations",
        "1",
        "--out",
        params.to_str().unwrap(),
    ]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let head = ivos_core::calibration::read_params_file(&params).unwrap();
    assert!((0.0..=1.0).contains(&head.alpha) && (0.0..=1.0).contains(&head.beta));

    let out = tmp.path().join("eval");
    let run = ivos(&[
        "--params",
        params.to_str().unwrap(),
        "eval",
        "--sequence",
        seq.to_str().unwrap(),
        "--rounds",
        "1",
        "--seeds",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
}
