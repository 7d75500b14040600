#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_segconf");

pub fn segconf(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[track_caller]
pub fn ok(args: &[&str]) -> Output {
    let out = segconf(args);
    assert!(out.status.success(), "{args:?} failed: {}", stderr(&out));
    out
}

#[track_caller]
pub fn exit_code(args: &[&str]) -> (i32, String) {
    let out = segconf(args);
    (out.status.code().expect("exited normally"), stderr(&out))
}

pub fn s(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

/// Every file under `root`, keyed by its path relative to `root`.
pub fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, files: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, files);
            } else {
                let bytes = std::fs::read(&path).unwrap();
                files.insert(path.strip_prefix(root).unwrap().to_path_buf(), bytes);
            }
        }
    }
    let mut files = BTreeMap::new();
    walk(root, root, &mut files);
    files
}

/// Writes a small synthetic dataset under `dir/data` and returns the manifest path.
pub fn synth(dir: &Path, seed: u64, count: usize, size: usize, task: &str) -> PathBuf {
    let data = dir.join("data");
    ok(&[
        "synth",
        "--seed",
        &seed.to_string(),
        "--count",
        &count.to_string(),
        "--size",
        &size.to_string(),
        "--task",
        task,
        "--out",
        s(&data),
    ]);
    data.join("manifest.json")
}

/// A shell script in `dir` that runs `body` with the job directory as `$1`.
#[cfg(unix)]
pub fn script(dir: &Path, name: &str, body: &str) -> PathBuf {
    use std::os::unix::fs::PermissionsExt;
    let path = dir.join(name);
    std::fs::write(&path, format!("#!/bin/sh\nset -e\n{body}\n")).unwrap();
    std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
    path
}

/// Script body delegating to the built-in adapter.
pub fn adapter_call(scorer: &str) -> String {
    format!("'{BIN}' adapter --scorer {scorer} \"$1\"")
}
