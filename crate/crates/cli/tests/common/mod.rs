#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use linescope::ConfigMap;
use sha2::{Digest, Sha256};

pub const BIN: &str = env!("CARGO_BIN_EXE_linescope");

/// A run small enough for every test to train and scan from scratch.
pub const TINY: &str = "
seed = 3
data.source = synthetic
data.n = 120
data.classes = 3
data.dim = 4
model.layers = 4,8,3
train.lr = 0.1
train.steps = 30
train.batch_size = 16
train.snapshot_stride = 10
train.eval_stride = 10
scan.stride = 5
scan.grid_res = 0.02
scan.per_sample = every:10
strategies.kernel = 3
";

pub fn tiny() -> ConfigMap {
    ConfigMap::parse(TINY, "tiny").unwrap()
}

pub fn write_conf(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("run_input.conf");
    std::fs::write(&p, text).unwrap();
    p
}

/// SHA-256 of every file under `root`, keyed by relative path.
pub fn tree_hashes(root: &Path) -> BTreeMap<String, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                let digest = Sha256::digest(std::fs::read(&p).unwrap());
                out.insert(rel, digest.iter().map(|b| format!("{b:02x}")).collect());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

pub fn run_bin(args: &[&str]) -> std::process::Output {
    std::process::Command::new(BIN)
        .args(args)
        .env_remove("LINESCOPE_THREADS")
        .output()
        .unwrap()
}
