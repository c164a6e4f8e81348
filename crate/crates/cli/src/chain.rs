//! Chain files (one JSON object per line) and run manifests.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use matinfer_core::materials::ModelKind;
use matinfer_core::sampler::{ChainSample, ChainStats};
use serde::{Deserialize, Serialize};

pub const CHAIN_DIR: &str = "chains";

/// Appends samples to a chain file, flushing after every line so a crash
/// loses at most the line being written.
pub struct ChainWriter {
    out: BufWriter<File>,
    path: PathBuf,
    written: usize,
}

impl ChainWriter {
    pub fn create(path: &Path) -> anyhow::Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let file = File::create(path).with_context(|| format!("creating chain file {}", path.display()))?;
        Ok(Self { out: BufWriter::new(file), path: path.to_owned(), written: 0 })
    }

    pub fn append(&mut self, sample: &ChainSample) -> anyhow::Result<()> {
        serde_json::to_writer(&mut self.out, sample)?;
        self.out.write_all(b"\n")?;
        self.out.flush().with_context(|| format!("writing chain file {}", self.path.display()))?;
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> usize {
        self.written
    }
}

/// Read a chain file. A final line without a terminating newline is an
/// interrupted write and is skipped; any other malformed line is an error.
pub fn read_chain(path: &Path) -> anyhow::Result<Vec<ChainSample>> {
    let file = File::open(path).with_context(|| format!("opening chain file {}", path.display()))?;
    parse_chain(BufReader::new(file)).with_context(|| format!("reading chain file {}", path.display()))
}

pub fn parse_chain<R: BufRead>(mut reader: R) -> anyhow::Result<Vec<ChainSample>> {
    let mut samples = Vec::new();
    let mut line = String::new();
    let mut number = 0;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        number += 1;
        let Some(body) = line.strip_suffix('\n') else {
            break;
        };
        if body.trim().is_empty() {
            continue;
        }
        let sample = serde_json::from_str(body).with_context(|| format!("line {number}"))?;
        samples.push(sample);
    }
    Ok(samples)
}

/// Everything needed to reproduce a chain bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub chain_id: String,
    pub model: ModelKind,
    /// Hash of the model manifest with prior overrides applied.
    pub model_manifest_hash: String,
    pub config_hash: String,
    /// Random-input seed.
    pub seed: u64,
    pub sampler_seed: u64,
    pub resolution: usize,
    pub code_version: String,
    pub target_hash: String,
    pub samples: usize,
    pub burn_in: usize,
    pub stats: Option<ChainStats>,
}

impl RunManifest {
    pub fn path(out: &Path, chain_id: &str) -> PathBuf {
        out.join(CHAIN_DIR).join(format!("{chain_id}.manifest.json"))
    }

    pub fn chain_path(out: &Path, chain_id: &str) -> PathBuf {
        out.join(CHAIN_DIR).join(format!("{chain_id}.jsonl"))
    }

    pub fn write(&self, out: &Path) -> anyhow::Result<()> {
        let path = Self::path(out, &self.chain_id);
        std::fs::write(&path, serde_json::to_string_pretty(self)?).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

pub fn code_version() -> String {
    env!("CARGO_PKG_VERSION").to_string()
}

/// Chain ids present under `out`, sorted.
pub fn list_chains(out: &Path) -> anyhow::Result<Vec<String>> {
    let dir = out.join(CHAIN_DIR);
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(&dir).with_context(|| format!("listing {}", dir.display()))? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix(".jsonl") {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    Ok(ids)
}

/// Chain ids double as file names.
pub fn check_chain_id(id: &str) -> anyhow::Result<()> {
    if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        bail!("invalid chain id `{id}`: use letters, digits, `-` and `_`");
    }
    Ok(())
}
