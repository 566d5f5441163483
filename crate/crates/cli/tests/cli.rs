use std::path::Path;
use std::process::{Command, Output};

fn llgctl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_llgctl"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn emit_config_round_trips_through_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("spin3.toml");
    let o = llgctl(&["emit-config", "spin3", "-o", cfg.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&cfg).unwrap();
    assert!(text.contains("name = \"spin3\""));

    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let o = llgctl(
        &["run", "spin3", "--samples", "100", "--out-dir", out_a.to_str().unwrap()],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let o = llgctl(
        &["run", cfg.to_str().unwrap(), "--samples", "100", "--out-dir", out_b.to_str().unwrap()],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let a = std::fs::read_to_string(out_a.join("trajectory.csv")).unwrap();
    let b = std::fs::read_to_string(out_b.join("trajectory.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn run_writes_artifacts_and_manifest_reproduces_them() {
    let dir = tempfile::tempdir().unwrap();
    let o = llgctl(&["run", "spin3", "--samples", "100", "--seed", "7"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("cost"));
    let run_dir = dir.path().join("runs/spin3");
    let traj = std::fs::read_to_string(run_dir.join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("t,"));
    assert_eq!(traj.lines().count(), 52);

    let manifest = run_dir.join("manifest.json");
    let again = dir.path().join("again");
    let o = llgctl(
        &["run", manifest.to_str().unwrap(), "--out-dir", again.to_str().unwrap()],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let traj2 = std::fs::read_to_string(again.join("trajectory.csv")).unwrap();
    assert_eq!(traj, traj2);
}

#[test]
fn validate_accepts_uppercase_method_and_writes_err_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = llgctl(&["validate", "test1", "--method", "B", "--samples", "200"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o);
    assert!(line.contains("mean err") && line.contains("max err"), "{line}");
    let err = std::fs::read_to_string(dir.path().join("runs/test1-B-M200/err.csv")).unwrap();
    assert!(err.starts_with("t,err,"));
    assert_eq!(err.lines().count(), 52);
}

#[test]
fn estimate_w_prints_interval() {
    let dir = tempfile::tempdir().unwrap();
    let o = llgctl(
        &["estimate-w", "test1", "--state", "0,0,1", "--samples", "1000"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.starts_with("w = ") && s.contains("95% CI"), "{s}");
}

#[test]
fn unknown_preset_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = llgctl(&["run", "nope"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("error"));
}

#[test]
fn malformed_state_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = llgctl(&["estimate-w", "test1", "--state", "1,0"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn strict_rejects_overflow_regime() {
    let dir = tempfile::tempdir().unwrap();
    let o = llgctl(&["emit-config", "test1"], dir.path());
    let text = stdout(&o)
        .replace("lambda = 1.0", "lambda = 1e-6")
        .replace("delta = 0.0", "delta = 1.0");
    let cfg = dir.path().join("overflow.toml");
    std::fs::write(&cfg, text).unwrap();

    let o = llgctl(
        &["estimate-w", cfg.to_str().unwrap(), "--samples", "100", "--strict"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("underflow"));
}
