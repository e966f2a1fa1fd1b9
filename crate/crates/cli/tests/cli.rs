//! End-to-end runs of the binary on the synthetic blob fixture.

use std::{
    path::{Path, PathBuf},
    process::{Command, Output},
};

use dropflat::{manifest::RunManifest, pipeline::FIT_CSV_HEADER};
use serde_json::Value;

const PIPELINE: [&str; 9] = [
    "train",
    "sample-trajectory",
    "sample-gradients",
    "pca-flatness",
    "hessian",
    "hessian-projection",
    "flatness",
    "alignment",
    "slice1d",
];

/// Manifest file label: the fixture samples gradients, so the kind-dependent
/// analyses carry a `-gradient` suffix.
fn label(cmd: &str) -> String {
    match cmd {
        "pca-flatness" | "hessian-projection" => format!("{cmd}-gradient"),
        _ => cmd.to_string(),
    }
}

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/blobs.toml")
}

fn dropflat(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dropflat"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], config: &Path, out: &Path) -> Output {
    let o = dropflat(args, config, out);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn run_pipeline(out: &Path) {
    for cmd in PIPELINE {
        ok(&[cmd], &fixture(), out);
    }
}

fn write_config(dir: &Path, edit: impl Fn(&str) -> String) -> PathBuf {
    let text = std::fs::read_to_string(fixture()).unwrap();
    let path = dir.join("edited.toml");
    std::fs::write(&path, edit(&text)).unwrap();
    path
}

#[test]
fn full_pipeline_writes_verified_manifests() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(dir.path());
    for cmd in PIPELINE {
        let m = RunManifest::load(&dir.path().join(format!("manifest-{}.json", label(cmd)))).unwrap();
        assert_eq!(m.command, cmd);
        m.verify(dir.path()).unwrap();
        assert!(!m.artifacts.is_empty(), "{cmd} recorded no artifacts");
    }
    let report = ok(&["report"], &fixture(), dir.path());
    let stdout = String::from_utf8(report.stdout).unwrap();
    assert!(stdout.lines().all(|l| l.starts_with("PASS ") || l.starts_with("FAIL ")));
    assert!(stdout.contains("train-accuracy"));
}

#[test]
fn same_seed_reproduces_every_artifact() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_pipeline(a.path());
    run_pipeline(b.path());
    for cmd in PIPELINE {
        let name = format!("manifest-{}.json", label(cmd));
        let ma = RunManifest::load(&a.path().join(&name)).unwrap();
        let mb = RunManifest::load(&b.path().join(&name)).unwrap();
        let sums = |m: &RunManifest| m.artifacts.iter().map(|x| (x.path.clone(), x.sha256.clone())).collect::<Vec<_>>();
        assert_eq!(sums(&ma), sums(&mb), "{cmd}");
        assert_eq!(ma.results, mb.results, "{cmd}");
    }
}

#[test]
fn different_seed_changes_the_checkpoint() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    ok(&["train"], &fixture(), a.path());
    ok(&["train", "--seed", "99"], &fixture(), b.path());
    let read = |d: &Path| std::fs::read(d.join("checkpoint.fltlns")).unwrap();
    assert_ne!(read(a.path()), read(b.path()));
}

#[test]
fn missing_prerequisite_names_the_producer() {
    let dir = tempfile::tempdir().unwrap();
    let o = dropflat(&["hessian"], &fixture(), dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("dropflat train"), "{err}");
    let o = dropflat(&["pca-flatness"], &fixture(), dir.path());
    assert!(String::from_utf8_lossy(&o.stderr).contains("dropflat sample-gradients"));
    ok(&["train"], &fixture(), dir.path());
    let o = dropflat(&["hessian-projection"], &fixture(), dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dropflat hessian"));
}

#[test]
fn invalid_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |t| t.replace("rate = 0.8", "rate = 1.5"));
    assert_eq!(dropflat(&["train"], &cfg, dir.path()).status.code(), Some(2));
    let cfg = write_config(dir.path(), |t| format!("{t}\nunknown_key = 1\n"));
    assert_eq!(dropflat(&["train"], &cfg, dir.path()).status.code(), Some(2));
    let missing = dir.path().join("nope.toml");
    assert_eq!(dropflat(&["train"], &missing, dir.path()).status.code(), Some(2));
}

#[test]
fn missing_mnist_is_a_config_error_with_a_hint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |t| t.replace("source = \"synthetic-blobs\"", "source = \"mnist\""));
    let o = Command::new(env!("CARGO_BIN_EXE_dropflat"))
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .env("DROPFLAT_DATA_DIR", dir.path().join("absent"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("DROPFLAT_DATA_DIR"));
}

#[test]
fn phase_timeout_exits_with_numeric_code_and_keeps_the_curve() {
    let dir = tempfile::tempdir().unwrap();
    // A frozen network never reaches the accuracy gate.
    let cfg = write_config(dir.path(), |t| {
        t.replace("lr = 0.2", "lr = 0.0")
            .replace("steps = 300", "steps = 1")
            .replace("max_steps = 2000", "max_steps = 60")
    });
    ok(&["train"], &cfg, dir.path());
    let o = dropflat(&["sample-trajectory"], &cfg, dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let curve = std::fs::read_to_string(dir.path().join("trajectory-timeout-curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 61);
}

#[test]
fn tampered_artifact_fails_the_report_with_integrity_code() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["train"], &fixture(), dir.path());
    ok(&["sample-gradients"], &fixture(), dir.path());
    let path = dir.path().join("samples-gradient.dfs");
    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&path, bytes).unwrap();
    let o = dropflat(&["report"], &fixture(), dir.path());
    assert_eq!(o.status.code(), Some(4));
    assert!(!dir.path().join("summary.json").exists());
}

#[test]
fn report_passes_fit_values_through_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["train", "sample-gradients", "pca-flatness"] {
        ok(&[cmd], &fixture(), dir.path());
    }
    ok(&["report"], &fixture(), dir.path());
    let csv = std::fs::read_to_string(dir.path().join("fit-pca-flatness-gradient.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(FIT_CSV_HEADER));
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let run = summary["runs"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["command"] == "pca-flatness")
        .unwrap();
    assert_eq!(run["fit"]["slope"].as_f64().unwrap(), row[0]);
    assert_eq!(run["fit"]["spearman"].as_f64().unwrap(), row[2]);
    assert_eq!(run["fit"]["used"].as_f64().unwrap(), row[3]);
}
