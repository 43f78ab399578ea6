//! Helpers shared by the integration-test targets. Each target uses a
//! subset, so the module as a whole allows dead code.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

pub fn acdf_bin() -> &'static str {
    env!("CARGO_BIN_EXE_acdf")
}

/// Small-but-real corpus: 2 events, 20 h, 5x5 coarse (=> 101x101 fine).
pub fn small_config() -> serde_json::Value {
    serde_json::json!({
        "scenario": {
            "n_events": 2,
            "hours": 20,
            "n_stations": 12,
            "n_lines": 2,
            "towers_per_line": 4
        },
        "grids": {"coarse_nx": 5, "coarse_ny": 5},
        "corrector": {"max_iters": 40},
        "risk": {"mc_samples": 2000}
    })
}

pub fn write_config(dir: &Path, config: &serde_json::Value) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    path
}

pub fn run_ok_env(dir: &Path, args: &[&str], envs: &[(&str, &str)]) -> serde_json::Value {
    let mut cmd = Command::new(acdf_bin());
    cmd.current_dir(dir)
        .args(["--config", "config.json"])
        .args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is a JSON manifest")
}

pub fn run_ok(dir: &Path, args: &[&str]) -> serde_json::Value {
    run_ok_env(dir, args, &[])
}

pub fn run_err(dir: &Path, args: &[&str]) -> serde_json::Value {
    let out = Command::new(acdf_bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        !out.status.success(),
        "command {args:?} unexpectedly passed"
    );
    serde_json::from_slice(&out.stderr).expect("stderr is a JSON error envelope")
}

pub fn manifest_hashes(manifest: &serde_json::Value) -> BTreeMap<String, String> {
    manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| {
            (
                f["path"].as_str().unwrap().to_string(),
                f["sha256"].as_str().unwrap().to_string(),
            )
        })
        .collect()
}

pub fn walk_files(root: &Path) -> Vec<String> {
    fn rec(dir: &Path, root: &Path, out: &mut Vec<String>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                rec(&path, root, out);
            } else {
                out.push(
                    path.strip_prefix(root)
                        .unwrap()
                        .to_string_lossy()
                        .replace('\\', "/"),
                );
            }
        }
    }
    let mut out = Vec::new();
    rec(root, root, &mut out);
    out.sort();
    out
}
