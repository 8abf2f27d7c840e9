use std::path::Path;
use std::process::{Command, Output};

use biosig::spectral::Dataset;
use tempfile::TempDir;

fn biosig(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_biosig")).args(args).output().expect("spawn biosig")
}

fn ok(args: &[&str]) -> Output {
    let out = biosig(args);
    assert!(out.status.success(), "biosig {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A 60-sample dataset and one-epoch desk checkpoints.
fn setup(kinds: &[&str]) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.spec");
    ok(&["--quiet", "gen-data", "--n", "60", "--out", p(&data)]);
    for kind in kinds {
        let ckpt = dir.path().join(format!("{kind}.ckpt"));
        ok(&["--quiet", "train", "--preset", "desk", "--epochs", "1", "--model", kind, "--data", p(&data), "--out", p(&ckpt)]);
    }
    dir
}

#[test]
fn gen_data_is_deterministic_and_records_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.spec"), dir.path().join("b.spec"));
    ok(&["--quiet", "gen-data", "--n", "100", "--seed", "42", "--out", p(&a)]);
    ok(&["--quiet", "gen-data", "--n", "100", "--seed", "42", "--out", p(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let (ds, _) = Dataset::read(&a).unwrap();
    assert_eq!(ds.meta().snr_range, [5.0, 100.0]);
    assert_eq!(ds.meta().seed, 42);
    assert!(dir.path().join("a.spec.config.json").exists());
}

#[test]
fn usage_errors_exit_one() {
    let out = biosig(&["gen-data", "--n", "10"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("Usage"), "{}", stderr(&out));
    assert_eq!(biosig(&["--help"]).status.code(), Some(0));
    assert_eq!(biosig(&["frobnicate"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let out = biosig(&["gen-data", "--n", "10", "--split-ratio", "1:1", "--out", p(&dir.path().join("x.spec"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unreadable_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("bogus.ckpt");
    std::fs::write(&bogus, b"NOTACKPT and some more bytes to pass the length check").unwrap();
    let data = dir.path().join("d.spec");
    ok(&["--quiet", "gen-data", "--n", "30", "--out", p(&data)]);
    let out = biosig(&["eval", "--ckpt", p(&bogus), "--data", p(&data), "--out-dir", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("bogus.ckpt") && err.contains("SQATCKPT"), "{err}");

    let out = biosig(&["eval", "--ckpt", p(&dir.path().join("missing.ckpt")), "--data", p(&data), "--out-dir", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(dir.path().join("bad.spec"), b"garbage").unwrap();
    let out = biosig(&["train", "--model", "cnn", "--data", p(&dir.path().join("bad.spec")), "--out", p(&bogus)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("SPECDS01"));
}

#[test]
fn pipeline_commands_and_kind_guard() {
    let dir = setup(&["cnn", "bcnn", "squat"]);
    let d = dir.path();
    let data = d.join("d.spec");

    let out = ok(&["eval", "--ckpt", p(&d.join("cnn.ckpt")), "--data", p(&data), "--out-dir", p(&d.join("ev"))]);
    let line = String::from_utf8_lossy(&out.stdout);
    assert!(line.starts_with("aggregate r2=") && line.contains("space=transformed"), "{line}");
    let metrics = std::fs::read_to_string(d.join("ev/metrics.csv")).unwrap();
    assert!(metrics.starts_with("species,r2,rmse,mae,space\n"));
    assert!(d.join("ev/error_correlation.csv").exists());

    for (kind, passes) in [("bcnn", 50), ("squat", 30)] {
        let out = d.join(format!("{kind}_mc.csv"));
        ok(&["--quiet", "mc-predict", "--ckpt", p(&d.join(format!("{kind}.ckpt"))), "--data", p(&data), "--out", p(&out)]);
        let cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join(format!("{kind}_mc.csv.config.json"))).unwrap()).unwrap();
        assert_eq!(cfg["mc_passes"], passes, "{kind}");
        let head = std::fs::read_to_string(&out).unwrap();
        assert!(head.starts_with("sample_id,species,mean,aleatoric_var,epistemic_var,lower95,upper95,truth\n"));
    }

    let out = biosig(&["attention", "--ckpt", p(&d.join("cnn.ckpt")), "--data", p(&data), "--out", p(&d.join("a.csv"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("attention export requires a squat checkpoint"));
    ok(&["--quiet", "attention", "--ckpt", p(&d.join("squat.ckpt")), "--data", p(&data), "--out", p(&d.join("a.csv"))]);
    let att = std::fs::read_to_string(d.join("a.csv")).unwrap();
    assert!(att.starts_with("wavelength_um,spectrum,O2,O3,CH4,N2O,CO2,H2O,CO,SO2\n"));
    assert_eq!(att.lines().count(), 356);

    ok(&["--quiet", "snr-sweep", "--ckpt", p(&d.join("cnn.ckpt")), p(&d.join("squat.ckpt")), "--data", p(&data), "--snrs", "5,100", "--out", p(&d.join("s.csv"))]);
    let sweep = std::fs::read_to_string(d.join("s.csv")).unwrap();
    assert!(sweep.starts_with("snr,model,r2,rmse\n"));
    assert_eq!(sweep.lines().count(), 5);
}

#[test]
fn training_is_reproducible_and_warns_on_foreign_data() {
    let dir = setup(&["squat"]);
    let d = dir.path();
    let again = d.join("squat.ckpt");
    let first = std::fs::read(&again).unwrap();
    ok(&["--quiet", "train", "--preset", "desk", "--epochs", "1", "--model", "squat", "--data", p(&d.join("d.spec")), "--out", p(&again)]);
    assert_eq!(first, std::fs::read(&again).unwrap());

    let other = d.join("other.spec");
    ok(&["--quiet", "--seed", "7", "gen-data", "--n", "60", "--out", p(&other)]);
    let out = ok(&["eval", "--ckpt", p(&again), "--data", p(&other), "--out-dir", p(&d.join("ev"))]);
    assert!(stderr(&out).contains("warning"), "{}", stderr(&out));
}

#[test]
fn config_files_are_strict_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("d.spec");
    ok(&["--quiet", "gen-data", "--n", "60", "--out", p(&data)]);
    std::fs::write(d.join("bad.json"), r#"{"model": "cnn", "learning_rate": 1}"#).unwrap();
    let out = biosig(&["--config", p(&d.join("bad.json")), "train", "--data", p(&data), "--out", p(&d.join("m.ckpt"))]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));

    std::fs::write(d.join("cfg.json"), r#"{"model": "cnn", "seed": 3, "cnn": {"filters": [4, 4, 4, 4, 4], "fc": [16]}}"#).unwrap();
    let ckpt = d.join("m.ckpt");
    ok(&["--quiet", "--config", p(&d.join("cfg.json")), "--seed", "9", "train", "--epochs", "1", "--data", p(&data), "--out", p(&ckpt)]);
    let cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("m.ckpt.config.json")).unwrap()).unwrap();
    assert_eq!(cfg["seed"], 9);
    assert_eq!(cfg["model"], "cnn");
    assert_eq!(cfg["cnn"]["fc"], serde_json::json!([16]));
    assert_eq!(cfg["train"]["epochs"], 1);
}
