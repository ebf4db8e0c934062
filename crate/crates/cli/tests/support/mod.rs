#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn repo(path: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(path)
}

/// The binary, run from `dir` with no inherited QDT_* settings.
pub fn qdt(dir: &Path) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_qdt"));
    cmd.current_dir(dir);
    for (key, _) in std::env::vars() {
        if key.starts_with("QDT_") {
            cmd.env_remove(key);
        }
    }
    cmd
}

/// Exit code, stdout, stderr.
pub fn run(cmd: &mut Command) -> (i32, String, String) {
    let Output {
        status,
        stdout,
        stderr,
    } = cmd.output().unwrap();
    (
        status.code().unwrap_or(-1),
        String::from_utf8_lossy(&stdout).into_owned(),
        String::from_utf8_lossy(&stderr).into_owned(),
    )
}

/// `qdt ingest` of the bundled cohort into `dir/qdt.db`.
pub fn ingest(dir: &Path) -> PathBuf {
    let store = dir.join("qdt.db");
    let (code, out, err) = run(qdt(dir)
        .args(["ingest", "--csv"])
        .arg(repo("data/diabetes_synthetic.csv"))
        .arg("--schema")
        .arg(repo("config/diabetes_schema.toml"))
        .arg("--store")
        .arg(&store));
    assert_eq!(code, 0, "{out}{err}");
    store
}

/// `qdt evaluate` with the demo script over 50 held-out records.
pub fn evaluate(dir: &Path, store: &Path, out: &str, extra: &[&str]) -> (i32, String, String) {
    run(qdt(dir)
        .arg("evaluate")
        .arg("--store")
        .arg(store)
        .arg("--script")
        .arg(repo("scripts/demo_script.toml"))
        .args(["--split-seed", "7", "--test-size", "50", "--out-dir", out])
        .args(extra))
}
