use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn tiny() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.toml")
}

fn litevio(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_litevio"))
        .arg("--config")
        .arg(tiny())
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("LITEVIO_OUT")
        .output()
        .unwrap()
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = litevio(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn trained() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-data"]);
    ok(dir.path(), &["train", "--data", dir.path().join("data").to_str().unwrap()]);
    dir
}

#[test]
fn full_tiny_pipeline() {
    let dir = trained();
    let d = dir.path();
    for f in ["data/train_00/poses.txt", "data/calib/manifest.json", "data/test_seed0/imu.csv", "model/checkpoint.json", "model/loss_stage1.csv", "model/train_summary.json"] {
        assert!(d.join(f).exists(), "{f}");
    }
    let tables = ok(d, &["adapt-online"]);
    assert!(tables.contains("ddf accuracy"));
    ok(d, &["adapt-online", "--protocol", "single-shift"]);
    ok(d, &["finetune-baseline", "--noise", "blur"]);
    assert!(d.join("finetune/blur.json").exists());
    let stationary = ok(d, &["adapt-stationary"]);
    assert!(stationary.contains("finetune"));
    for sub in ["continual", "single-shift", "stationary"] {
        ok(d, &["report", "--dir", d.join(sub).to_str().unwrap()]);
        let s = json(&d.join(sub).join("summary.json"));
        assert_eq!(s["schema"], "litevio-report");
    }
    // re-running a protocol rewrites identical bytes
    let before = fs::read(d.join("continual/report.json")).unwrap();
    ok(d, &["adapt-online"]);
    assert_eq!(fs::read(d.join("continual/report.json")).unwrap(), before);
}

#[test]
fn zero_rate_matches_frozen_bit_for_bit() {
    let dir = trained();
    ok(dir.path(), &["adapt-online", "--eta", "0"]);
    let r = json(&dir.path().join("continual/report.json"));
    for pair in r["sequences"].as_array().unwrap().chunks(2) {
        assert_eq!(pair[0]["method"], "frozen");
        assert_eq!(pair[1]["method"], "tta");
        assert_eq!(pair[0]["pred"], pair[1]["pred"]);
    }
}

#[test]
fn explicit_schedule_and_seed() {
    let dir = trained();
    ok(dir.path(), &["--seed", "2", "adapt-online", "--schedule", "frames=40;contrast:10-30:5"]);
    let r = json(&dir.path().join("continual/report.json"));
    assert_eq!(r["schedule"], "frames=40;contrast:10-30:5");
    assert!(r["sequences"].as_array().unwrap().iter().all(|s| s["seed"] == 2));
    let bad = litevio(dir.path(), &["adapt-online", "--schedule", "frames=12;blur:0-4:3"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn eval_of_identical_files_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let poses = "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 1 0 1 0 0 0 0 1 0\n1 0 0 2.5 0 1 0 0.1 0 0 1 0\n";
    let p = dir.path().join("p.txt");
    fs::write(&p, poses).unwrap();
    ok(dir.path(), &["eval", "--pred", p.to_str().unwrap(), "--gt", p.to_str().unwrap()]);
    let r = json(&dir.path().join("eval/report.json"));
    assert_eq!(r["sequences"][0]["t_rmse"], 0.0);
    assert_eq!(r["sequences"][0]["r_rmse"], 0.0);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(litevio(dir.path(), &["adapt-online", "--bogus"]).status.code(), Some(2));
    assert_eq!(litevio(dir.path(), &["no-such-command"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_are_json_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let o = litevio(dir.path(), &["adapt-online"]);
    assert_eq!(o.status.code(), Some(1));
    let line: Value = serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap();
    assert_eq!(line["error"], "state");
    assert!(line["message"].as_str().unwrap().contains("checkpoint"));

    let o = litevio(dir.path(), &["report"]);
    assert_eq!(o.status.code(), Some(1));
    let line: Value = serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap();
    assert_eq!(line["error"], "io");
}

#[test]
fn tampered_report_fails_verification() {
    let dir = trained();
    ok(dir.path(), &["adapt-online"]);
    let path = dir.path().join("continual/report.json");
    let mut r = json(&path);
    let v = r["sequences"][0]["t_rmse"].as_f64().unwrap();
    r["sequences"][0]["t_rmse"] = Value::from(v * 2.0);
    fs::write(&path, serde_json::to_string(&r).unwrap()).unwrap();
    let o = litevio(dir.path(), &["report"]);
    assert_eq!(o.status.code(), Some(1));
    let line: Value = serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap();
    assert_eq!(line["error"], "structural");
}
