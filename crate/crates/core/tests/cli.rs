use std::path::Path;
use std::process::{Command, Output};

fn spikediff(dir: &Path, args: &[&str], env_seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_spikediff"));
    cmd.args(args)
        .arg("--set")
        .arg(format!("out_dir={}", dir.display()))
        .env_remove("SPIKEDIFF_SEED");
    if let Some(s) = env_seed {
        cmd.env("SPIKEDIFF_SEED", s);
    }
    cmd.output().unwrap()
}

const TINY: &[&str] = &["--set", "hidden=16", "--set", "t_diff=50", "--set", "steps=5", "--set", "n_samples=8"];

fn with<'a>(head: &[&'a str], tail: &[&'a str]) -> Vec<&'a str> {
    head.iter().chain(tail).copied().collect()
}

#[test]
fn verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = spikediff(dir.path(), &["verify"], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(dir.path().join("verify.json")).unwrap();
    assert!(report.contains("\"pass\": true"));
    assert!(dir.path().join("verify_manifest.json").exists());
}

#[test]
fn unknown_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = spikediff(dir.path(), &["sample", "--set", "nope=1"], None);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "validation");
}

#[test]
fn missing_checkpoint_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = spikediff(dir.path(), &with(&["sample", "--set", "checkpoint=/nonexistent.sdmc"], TINY), None);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "runtime");
}

#[test]
fn sampling_is_reproducible_and_env_seed_only_fills_a_gap() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let args = with(&["sample"], TINY);
    assert!(spikediff(a.path(), &args, Some("9")).status.success());
    assert!(spikediff(b.path(), &with(&args, &["--set", "seed=9"]), None).status.success());
    assert!(spikediff(c.path(), &with(&args, &["--set", "seed=9"]), Some("3")).status.success());
    let read = |d: &Path| std::fs::read(d.join("samples.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert_eq!(read(b.path()), read(c.path()));
    let rows = String::from_utf8(read(a.path())).unwrap();
    assert_eq!(rows.lines().next(), Some("x0,x1"));
    assert_eq!(rows.lines().count(), 9);
}

#[test]
fn train_then_finetune_then_energy() {
    let dir = tempfile::tempdir().unwrap();
    let short = with(TINY, &["--set", "stage1_iters=20", "--set", "stage2_iters=1", "--set", "batch_size=32"]);
    let out = spikediff(dir.path(), &with(&["train"], &short), None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let loss = std::fs::read_to_string(dir.path().join("loss_stage1.csv")).unwrap();
    assert_eq!(loss.lines().count(), 21);

    let out = spikediff(dir.path(), &with(&["finetune"], &short), None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("model_tsm.sdmc").exists());

    let out = spikediff(dir.path(), &with(&["energy"], TINY), None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("energy.json")).unwrap()).unwrap();
    assert!(report["totals"]["pj"].as_f64().unwrap() > 0.0);
}

#[test]
fn convert_writes_divergence_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = spikediff(dir.path(), &["convert", "--set", "n_inputs=50"], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("divergence.json")).unwrap()).unwrap();
    assert_eq!(report["layers"][0]["max_abs_gap"].as_f64(), Some(0.0));
}
