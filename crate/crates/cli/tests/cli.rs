use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ieci::config::RunConfig;
use ieci::optimizer::ConstraintMode;
use ieci::output::parse_trace;

fn ieci() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ieci"));
    cmd.env_remove("IECI_OUTPUT_DIR");
    cmd
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn short_run(out: &Path) -> Command {
    let mut cmd = ieci();
    cmd.args(["run", "--problem", "f1d", "--seed", "4", "--n-init", "8", "--rounds", "2", "--candidates", "20"])
        .arg("--output-dir")
        .arg(out);
    cmd
}

#[test]
fn run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let o = short_run(dir.path()).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["config.toml", "trace.csv", "design.csv", "progress.csv", "surface.csv"] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let rows = parse_trace(fs::File::open(dir.path().join("trace.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 2);
    let cfg = RunConfig::parse(&fs::read_to_string(dir.path().join("config.toml")).unwrap()).unwrap();
    assert_eq!((cfg.seed, cfg.n_init, cfg.rounds, cfg.candidates), (4, 8, 2, 20));
    let design = fs::read_to_string(dir.path().join("design.csv")).unwrap();
    assert_eq!(design.lines().count(), 1 + 10);
    assert!(stdout(&o).contains("incumbent"));
}

#[test]
fn same_seed_gives_identical_trace() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(short_run(a.path()).output().unwrap().status.success());
    assert!(short_run(b.path()).output().unwrap().status.success());
    let read = |d: &Path| fs::read(d.join("trace.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn unknown_problem_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = ieci().args(["run", "--problem", "rosenbrock"]).arg("--output-dir").arg(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("trace.csv").exists());
}

#[test]
fn malformed_config_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "problem = \"f1d\"\nn_init = \"many\"\n").unwrap();
    let o = ieci().arg("run").arg("--config").arg(&path).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.toml"));

    fs::write(&path, "problem = \"f1d\"\nunknown_key = 1\n").unwrap();
    let o = ieci().arg("run").arg("--config").arg(&path).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    let out = dir.path().join("out");
    fs::write(&path, "problem = \"f1d\"\nseed = 1\nn_init = 8\nrounds = 5\ncandidates = 20\n").unwrap();
    let o = ieci()
        .arg("run")
        .arg("--config")
        .arg(&path)
        .args(["--rounds", "1", "--constraint-mode", "known-indicator"])
        .arg("--output-dir")
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = RunConfig::parse(&fs::read_to_string(out.join("config.toml")).unwrap()).unwrap();
    assert_eq!(cfg.rounds, 1);
    assert_eq!(cfg.seed, 1);
    assert_eq!(cfg.constraint_mode, ConstraintMode::KnownIndicator);
    assert_eq!(parse_trace(fs::File::open(out.join("trace.csv")).unwrap()).unwrap().len(), 1);
}

#[test]
fn output_dir_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = ieci()
        .env("IECI_OUTPUT_DIR", dir.path())
        .args(["run", "--problem", "f2d", "--n-init", "8", "--rounds", "1", "--candidates", "20"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("round,x1,x2,"));
}

#[test]
fn verify_passes_and_catches_tampering() {
    let o = ieci().args(["verify", "--suite", "ei", "--suite", "deduced"]).output().unwrap();
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS ei"));

    let o = ieci().args(["verify", "--suite", "ei", "--tamper-ei", "1.01"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL ei"));
    assert!(stderr(&o).contains("failing suites: ei"));
}

#[test]
fn describe_lists_benchmarks() {
    let o = ieci().arg("describe").output().unwrap();
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("f1d") && text.contains("f2d"));
    assert_eq!(ieci().args(["describe", "nope"]).output().unwrap().status.code(), Some(2));
}
