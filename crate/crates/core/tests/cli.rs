use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn domd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_domd")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn run_writes_artifacts_with_hash_comment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", "horizon = 50\n");
    let out = tmp.path().join("out");
    let o = domd(&["run", "--config", &cfg, "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["regret.csv", "regret_summary.csv", "disagreement.csv", "trajectory.csv", "bounds.csv", "path.csv"] {
        let body = fs::read_to_string(out.join(name)).unwrap();
        assert!(body.starts_with("# config_hash="), "{name}");
    }
}

#[test]
fn output_dir_from_config_is_relative_to_caller() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("from_config");
    let cfg = write(tmp.path(), "c.toml", &format!("horizon = 20\noutput_dir = {:?}\n", out.to_str().unwrap()));
    assert!(domd(&["run", "--config", &cfg]).status.success());
    assert!(out.join("regret.csv").exists());
}

#[test]
fn config_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();
    let bad_range = write(tmp.path(), "a.toml", "[noise]\nsigma_v2 = -1.0\n");
    let o = domd(&["run", "--config", &bad_range, "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("noise.sigma_v2"));

    let unknown = write(tmp.path(), "b.toml", "[noise]\nsigma = 1.0\n");
    assert_eq!(domd(&["run", "--config", &unknown, "--out", out]).status.code(), Some(1));
    assert_eq!(domd(&["run", "--config", "/nonexistent.toml", "--out", out]).status.code(), Some(1));

    let ok = write(tmp.path(), "c.toml", "horizon = 10\n");
    let o = domd(&["sweep", "--config", &ok, "--param", "gradient.convention", "--values", "1", "--out", out]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn env_override_changes_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", "horizon = 20\n");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(domd(&["run", "--config", &cfg, "--out", a.to_str().unwrap()]).status.success());
    let o = Command::new(env!("CARGO_BIN_EXE_domd"))
        .args(["run", "--config", &cfg, "--out", b.to_str().unwrap()])
        .env("DOMD_NOISE__SIGMA_V2", "0.25")
        .output()
        .unwrap();
    assert!(o.status.success());
    let first = |p: &Path| fs::read_to_string(p.join("regret.csv")).unwrap().lines().next().unwrap().to_string();
    assert_ne!(first(&a), first(&b));
}

#[test]
fn verify_bounds_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = tmp.path().join("ok");
    let o = domd(&["verify-bounds", "--seeds", "1", "--out", ok.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(ok.join("verify.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("case,seed,check"));

    let bad = tmp.path().join("bad");
    let o = domd(&["verify-bounds", "--seeds", "1", "--out", bad.to_str().unwrap(), "--l-scale", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(fs::read_to_string(bad.join("verify.csv")).unwrap().contains(",false"));
}

#[test]
fn sweep_outputs_one_row_per_value_and_step() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", "horizon = 30\n");
    let out = tmp.path().join("s");
    let o = domd(&[
        "sweep", "--config", &cfg, "--param", "noise.sigma_v2", "--values", "0.25,0.5,1.0", "--runs", "2", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let body = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(body.lines().filter(|l| !l.starts_with('#')).count(), 1 + 3 * 30);
    let summary = fs::read_to_string(out.join("sweep_summary.csv")).unwrap();
    assert_eq!(summary.lines().filter(|l| !l.starts_with('#')).count(), 1 + 3);
}
