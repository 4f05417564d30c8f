use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cpnn::checkpoint;
use cpnn::model::{AblationFlags, CpnnParameters, ModelConfig, WeightHead};
use cpnn::prototype::PrototypeMatrix;
use tempfile::TempDir;

fn cpnn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpnn"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = cpnn(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Small synthetic dataset with fitted prototypes and reference proportions.
fn prepared(n_slides: usize) -> TempDir {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("synth.json"),
        format!(r#"{{"n_genes": 30, "n_cells": 250, "n_slides": {n_slides}, "patches_per_slide": 5, "seed": 4}}"#),
    )
    .unwrap();
    ok(d, &["synth", "--config", "synth.json", "--out", "data"]);
    ok(
        d,
        &[
            "fit-prototypes",
            "--sc",
            "data/sc.mtx",
            "--annotations",
            "data/sc_annotations.csv",
            "--out",
            "proto",
            "--epochs",
            "100",
        ],
    );
    ok(
        d,
        &[
            "deconvolve",
            "--bulk",
            "data/bulk.csv",
            "--prototypes",
            "proto/prototypes.csv",
            "--out",
            "wref.csv",
        ],
    );
    tmp
}

fn train_slide(d: &Path, out: &str, extra: &[&str]) -> String {
    let mut args = vec![
        "train-slide",
        "--seed",
        "5",
        "--prototypes",
        "proto/prototypes.csv",
        "--features",
        "data/features",
        "--bulk",
        "data/bulk.csv",
        "--wref",
        "wref.csv",
        "--out",
        out,
        "--epochs",
        "15",
        "--folds",
        "2",
    ];
    args.extend_from_slice(extra);
    ok(d, &args)
}

#[test]
fn no_arguments_prints_usage_and_exits_1() {
    let tmp = TempDir::new().unwrap();
    let out = cpnn(tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_subcommand_and_flag_exit_1() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(cpnn(tmp.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        cpnn(tmp.path(), &["gradcheck", "--seed", "1", "--bogus"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn training_requires_a_seed() {
    let tmp = TempDir::new().unwrap();
    let out = cpnn(
        tmp.path(),
        &[
            "train-slide",
            "--prototypes",
            "p.csv",
            "--features",
            "f",
            "--bulk",
            "b.csv",
            "--wref",
            "w.csv",
            "--out",
            "o",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
}

#[test]
fn missing_input_is_a_data_error() {
    let tmp = TempDir::new().unwrap();
    let out = cpnn(
        tmp.path(),
        &["evaluate", "--pred", "nope.csv", "--truth", "nope.csv"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_prints_one_record_per_objective() {
    let tmp = TempDir::new().unwrap();
    let stdout = ok(tmp.path(), &["gradcheck", "--seed", "7"]);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 2);
    for line in lines {
        assert!(line.starts_with("max_rel_err="), "{line}");
        assert!(
            line.contains(" worst=") && line.contains(" pass=true"),
            "{line}"
        );
    }
}

#[test]
fn slide_pipeline_runs_to_metrics() {
    let tmp = prepared(10);
    let d = tmp.path();
    let summary = train_slide(d, "run", &["--no-timestamp"]);
    assert!(summary.starts_with("folds=2 mean_pcc="), "{summary}");
    for f in [
        "config.json",
        "splits.csv",
        "cv_metrics.csv",
        "fold0/checkpoint.json",
        "fold1/history.csv",
    ] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
    let history = fs::read_to_string(d.join("run/fold0/history.csv")).unwrap();
    assert!(history.starts_with("epoch,train_loss,val_loss,nb,reg\n"));

    ok(
        d,
        &[
            "predict",
            "--checkpoint",
            "run/fold0/checkpoint.json",
            "--features",
            "data/features",
            "--bulk",
            "data/bulk.csv",
            "--out",
            "pred.csv",
        ],
    );
    let line = ok(
        d,
        &[
            "evaluate",
            "--pred",
            "pred.csv",
            "--truth",
            "data/bulk.csv",
            "--out",
            "metrics.csv",
        ],
    );
    assert!(
        line.starts_with("mean_pcc=") && line.contains(" mean_scc=") && line.contains(" n_genes=")
    );
    let metrics = fs::read_to_string(d.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("gene,pcc,scc\n"));

    ok(
        d,
        &[
            "export-weights",
            "--checkpoint",
            "run/fold0/checkpoint.json",
            "--features",
            "data/features",
            "--out",
            "weights.csv",
        ],
    );
    let weights = fs::read_to_string(d.join("weights.csv")).unwrap();
    let rows: Vec<&str> = weights.lines().skip(1).collect();
    assert_eq!(rows.len(), 10);
    for row in rows {
        let total: f64 = row
            .split(',')
            .skip(1)
            .map(|v| v.parse::<f64>().unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
}

#[test]
fn identical_seeds_give_identical_files() {
    let tmp = prepared(8);
    let d = tmp.path();
    let a = train_slide(d, "a", &["--no-timestamp"]);
    let b = train_slide(d, "b", &["--no-timestamp"]);
    assert_eq!(a, b);
    for f in [
        "config.json",
        "splits.csv",
        "cv_metrics.csv",
        "fold0/checkpoint.json",
        "fold0/history.csv",
        "fold0/metrics.csv",
        "fold1/predictions.csv",
    ] {
        let x = fs::read(d.join("a").join(f)).unwrap();
        let y = fs::read(d.join("b").join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
    let stamped = train_slide(d, "c", &[]);
    assert_eq!(stamped, a);
    let text = fs::read_to_string(d.join("c/fold0/checkpoint.json")).unwrap();
    assert!(text.contains("created_unix"));
}

#[test]
fn patch_training_defaults_to_leave_one_slide_out() {
    let tmp = prepared(3);
    let d = tmp.path();
    let summary = ok(
        d,
        &[
            "train-patch",
            "--seed",
            "2",
            "--prototypes",
            "proto/prototypes.csv",
            "--features",
            "data/features",
            "--spots",
            "data/spots",
            "--out",
            "loo",
            "--epochs",
            "5",
            "--no-timestamp",
        ],
    );
    assert!(summary.starts_with("folds=3 "), "{summary}");
    let splits = fs::read_to_string(d.join("loo/splits.csv")).unwrap();
    let mut folds: Vec<&str> = splits
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    folds.sort();
    assert_eq!(folds, ["0", "1", "2"]);
    for k in 0..3 {
        let pred = fs::read_to_string(d.join(format!("loo/fold{k}/predictions.csv"))).unwrap();
        assert_eq!(pred.lines().count(), 1 + 5);
    }
}

#[test]
fn uniform_head_exports_equal_weights() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let p0 = PrototypeMatrix::new(
        ndarray::array![[0.5, 0.5], [0.2, 0.8], [0.9, 0.1]],
        vec!["a".into(), "b".into(), "c".into()],
        vec!["g0".into(), "g1".into()],
    )
    .unwrap();
    let mut params =
        CpnnParameters::init(&p0, 2, &ModelConfig::default(), AblationFlags::full(), 0).unwrap();
    params.head = WeightHead::zeros(3, 2, 2, true);
    checkpoint::save(d.join("ck.json"), &params, 0, None).unwrap();
    fs::create_dir(d.join("feat")).unwrap();
    fs::write(
        d.join("feat/s1.csv"),
        "patch_id,f_0,f_1\np0,1.5,-2\np1,0.3,4\n",
    )
    .unwrap();
    ok(
        d,
        &[
            "export-weights",
            "--checkpoint",
            "ck.json",
            "--features",
            "feat",
            "--out",
            "w.csv",
        ],
    );
    let text = fs::read_to_string(d.join("w.csv")).unwrap();
    let values: Vec<f64> = text
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .skip(1)
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(values.len(), 3);
    assert!(values.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
}

#[test]
fn predict_needs_library_sizes() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let p0 = PrototypeMatrix::new(
        ndarray::array![[0.5, 0.5]],
        vec!["a".into()],
        vec!["g0".into(), "g1".into()],
    )
    .unwrap();
    let params =
        CpnnParameters::init(&p0, 1, &ModelConfig::default(), AblationFlags::full(), 0).unwrap();
    checkpoint::save(d.join("ck.json"), &params, 0, None).unwrap();
    fs::create_dir(d.join("feat")).unwrap();
    fs::write(d.join("feat/s1.csv"), "patch_id,f_0\np0,1\n").unwrap();
    let out = cpnn(
        d,
        &[
            "predict",
            "--checkpoint",
            "ck.json",
            "--features",
            "feat",
            "--out",
            "p.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    ok(
        d,
        &[
            "predict",
            "--checkpoint",
            "ck.json",
            "--features",
            "feat",
            "--library",
            "1000",
            "--out",
            "p.csv",
        ],
    );
    let text = fs::read_to_string(d.join("p.csv")).unwrap();
    let total: f64 = text
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .skip(1)
        .map(|v| v.parse::<f64>().unwrap())
        .sum();
    assert!((total - 1000.0).abs() < 1e-9);
}
