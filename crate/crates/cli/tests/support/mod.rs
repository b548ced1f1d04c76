//! Shared helpers for driving the `dldp` binary.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const STAGES: [&str; 10] = [
    "synth", "extract", "baseline", "discover", "domains", "index", "rank", "eval", "sweep", "report",
];

/// Small end-to-end config: every stage runs in a few seconds.
pub const SMALL_CONFIG: &str = r#"
seed = 3

[synth]
persons_per_mode = 6
images_per_person = 8
test_persons_per_mode = 8
distractors = 40

[train.baseline]
total_iters = 600
lr_drop_every = 200

[train.domain]
total_iters = 200

[train.hard]
total_iters = 50

[discovery]
k = 4
restarts = 5
inner_iters = 100
max_outer = 6

[sweep]
gallery_sizes = [40, 80, 160]
"#;

pub fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(&p, text).unwrap();
    p
}

pub fn dldp(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dldp"))
        .args(args)
        .env("DLDP_OUT", out)
        .output()
        .expect("spawn dldp")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Runs every stage in order, panicking on the first failure.
pub fn run_all(out: &Path, config: &Path, extra: &[&str]) {
    for stage in STAGES {
        let mut args = vec![stage, "--config", config.to_str().unwrap()];
        args.extend_from_slice(extra);
        let o = dldp(out, &args);
        assert!(o.status.success(), "`dldp {stage}` failed: {}", stderr(&o));
    }
}

/// Relative path and contents of every file under `root`, sorted.
pub fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, acc: &mut Vec<(PathBuf, Vec<u8>)>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, acc);
            } else {
                acc.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut acc = Vec::new();
    walk(root, root, &mut acc);
    acc.sort();
    acc
}
