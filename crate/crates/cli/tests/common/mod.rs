#![allow(dead_code)]

use std::path::{Path, PathBuf};

use matinfer::config::RunConfig;

/// A small, fast bump run rooted in `dir`.
pub fn bump_config(dir: &Path) -> RunConfig {
    let text = r#"
model = "bump"
seed = 7
resolution = 32
out = "run"

[[summary]]
op = "bins"
layout = "concentric"
k = 8

[[summary]]
op = "mean"

[sampler]
samples = 60
burn_in = 30
tune_window = 5
seed = 3

[map]
iterations = 15

[target.synth.values]
roughness = 0.3
"#;
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    RunConfig::load(&path).unwrap()
}

pub fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

pub fn chain_file(cfg: &RunConfig, id: &str) -> PathBuf {
    matinfer::chain::RunManifest::chain_path(&cfg.out, id)
}
