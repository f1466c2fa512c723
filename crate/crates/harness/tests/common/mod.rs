#![allow(dead_code)]

use std::path::{Path, PathBuf};

use mvdit::RunConfig;
use sha2::{Digest, Sha256};

pub const DESK: &str = include_str!("../../../../configs/desk.cfg");
pub const OVERFIT: &str = include_str!("../../../../configs/overfit.cfg");

pub fn desk() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.apply_text(DESK).unwrap();
    cfg
}

/// Desk model shrunk further for tests that only need a working pipeline.
pub fn tiny() -> RunConfig {
    let mut cfg = desk();
    for (k, v) in [("depth", "2"), ("dim", "16"), ("n_views", "6"), ("n_scenes", "2"), ("steps", "40"), ("warmup_steps", "5"), ("sample_steps", "5"), ("log_every", "0")] {
        cfg.set(k, v).unwrap();
    }
    cfg
}

pub fn set(cfg: &mut RunConfig, pairs: &[(&str, &str)]) {
    for (k, v) in pairs {
        cfg.set(k, v).unwrap_or_else(|e| panic!("{k}={v}: {e}"));
    }
}

pub fn with_path(cfg: &mut RunConfig, key: &str, p: &Path) {
    cfg.set(key, p.to_str().unwrap()).unwrap();
}

/// Relative path and SHA-256 of every file under `root`, sorted.
pub fn digest_tree(root: &Path) -> Vec<(PathBuf, String)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = std::fs::read(&p).unwrap();
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), hex::encode(Sha256::digest(bytes))));
            }
        }
    }
    out.sort();
    out
}
