//! Run configuration, read from a TOML file and overridden by CLI flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use matinfer_core::materials::{ModelKind, ModelSpec, ParamVector};
use matinfer_core::posterior::ErrorSettings;
use matinfer_core::render::CameraRig;
use matinfer_core::sampler::{MapConfig, SamplerConfig};
use matinfer_core::summary::{BinLayout, FeatureNet, Summary, SummaryOp};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Environment variable naming a feature-net weights file for Gram summaries.
pub const WEIGHTS_ENV: &str = "MATINFER_WEIGHTS";

pub const DEFAULT_RESOLUTION: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    /// Expected model manifest hash; checked when present.
    #[serde(default)]
    pub manifest_hash: Option<String>,
    /// Seeds the random inputs `z`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    /// Output directory.
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Parameter record to start fitting or sampling from.
    #[serde(default)]
    pub init_from: Option<PathBuf>,
    #[serde(default)]
    pub rig: RigConfig,
    #[serde(default)]
    pub priors: BTreeMap<String, PriorOverride>,
    /// Summary components; the model's default recipe when absent.
    #[serde(default)]
    pub summary: Option<Vec<SummaryComponent>>,
    #[serde(default)]
    pub error: ErrorSettings,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub map: MapSettings,
    #[serde(default)]
    pub target: TargetConfig,
    #[serde(default)]
    pub serve: ServeConfig,
}

fn default_resolution() -> usize {
    DEFAULT_RESOLUTION
}

fn default_out() -> PathBuf {
    PathBuf::from("run")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigConfig {
    /// Horizontal field of view in degrees.
    pub field_of_view_deg: f64,
    pub distance: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self { field_of_view_deg: CameraRig::DEFAULT_FOV.to_degrees(), distance: 1.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorOverride {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub low: Option<f64>,
    pub high: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum SummaryComponent {
    Mean {
        #[serde(default = "one")]
        weight: f64,
    },
    Bins {
        layout: BinLayout,
        k: usize,
        #[serde(default = "one")]
        weight: f64,
    },
    FftBins {
        #[serde(default = "default_fft_bins")]
        k: usize,
        #[serde(default = "one")]
        weight: f64,
    },
    Gram {
        #[serde(default = "one")]
        weight: f64,
        /// Feature-net weights; falls back to the environment variable, then
        /// to the built-in random network.
        #[serde(default)]
        weights_file: Option<PathBuf>,
    },
}

fn one() -> f64 {
    1.0
}

fn default_fft_bins() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapSettings {
    /// Run MAP before sampling when no initial record is given.
    pub before_sampling: bool,
    pub iterations: usize,
    pub step: f64,
    pub decay: f64,
    pub epsilon: f64,
}

impl Default for MapSettings {
    fn default() -> Self {
        let m = MapConfig::default();
        Self { before_sampling: true, iterations: m.iterations, step: m.step, decay: m.decay, epsilon: m.epsilon }
    }
}

impl MapSettings {
    pub fn optimizer(&self) -> MapConfig {
        MapConfig { iterations: self.iterations, step: self.step, decay: self.decay, epsilon: self.epsilon }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetConfig {
    /// Target photograph or rendering (PNG or EXR).
    pub image: Option<PathBuf>,
    pub synth: Option<SynthSpec>,
}

/// Ground truth for a synthetic target.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    /// Continuous values; the prior means when absent.
    pub theta_c: Option<Vec<f64>>,
    /// Discrete choices; the first choice when absent.
    pub theta_d: Option<Vec<usize>>,
    /// Named continuous values applied on top of `theta_c`.
    pub values: BTreeMap<String, f64>,
    /// Random-input seed for the target; the run seed when absent, which
    /// gives the inference the same `z` as the target.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub address: String,
    /// Concurrent render workers.
    pub workers: usize,
    /// Cached rendered images.
    pub cache_entries: usize,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self { address: "127.0.0.1:8080".into(), workers: 2, cache_entries: 256 }
    }
}

impl RunConfig {
    pub fn new(model: ModelKind) -> Self {
        toml::from_str(&format!("model = \"{}\"", model.name())).expect("minimal config parses")
    }

    /// Parse a config file. Relative paths inside it are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out);
        if let Some(p) = self.init_from.as_mut() {
            fix(p);
        }
        if let Some(p) = self.target.image.as_mut() {
            fix(p);
        }
        for c in self.summary.iter_mut().flatten() {
            if let SummaryComponent::Gram { weights_file: Some(p), .. } = c {
                fix(p);
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    /// Model spec with prior overrides applied. A configured manifest hash
    /// must match the model's built-in manifest.
    pub fn spec(&self) -> anyhow::Result<ModelSpec> {
        let mut spec = self.model.spec();
        if let Some(expected) = &self.manifest_hash {
            let got = spec.manifest_hash();
            if &got != expected {
                bail!("model manifest hash {got} does not match configured {expected}");
            }
        }
        for (name, o) in &self.priors {
            spec.override_prior(name, o.mean, o.std, o.low, o.high).with_context(|| format!("prior override `{name}`"))?;
        }
        Ok(spec)
    }

    pub fn rig(&self) -> anyhow::Result<CameraRig> {
        Ok(CameraRig::new(self.rig.field_of_view_deg.to_radians(), self.rig.distance, self.resolution)?)
    }

    pub fn summary(&self) -> anyhow::Result<Summary> {
        let Some(components) = &self.summary else {
            return Ok(match std::env::var_os(WEIGHTS_ENV) {
                Some(path) if self.model != ModelKind::BrushedMetal && self.model != ModelKind::TranslucentDemo => {
                    Summary::new(vec![(SummaryOp::Gram(load_net(Path::new(&path))?), 1.0), (SummaryOp::Mean, 1.0)])?
                }
                _ => Summary::default_for(self.model),
            });
        };
        let mut ops = Vec::with_capacity(components.len());
        for c in components {
            ops.push(match c {
                SummaryComponent::Mean { weight } => (SummaryOp::Mean, *weight),
                SummaryComponent::Bins { layout, k, weight } => (SummaryOp::Bins { layout: *layout, k: *k }, *weight),
                SummaryComponent::FftBins { k, weight } => (SummaryOp::FftBins { k: *k }, *weight),
                SummaryComponent::Gram { weight, weights_file } => {
                    let net = match weights_file.clone().or_else(|| std::env::var_os(WEIGHTS_ENV).map(PathBuf::from)) {
                        Some(path) => load_net(&path)?,
                        None => Arc::new(FeatureNet::random_default()),
                    };
                    (SummaryOp::Gram(net), *weight)
                }
            });
        }
        Ok(Summary::new(ops)?)
    }

    /// Ground-truth parameters of the synthetic target.
    pub fn synth_theta(&self, spec: &ModelSpec) -> anyhow::Result<ParamVector> {
        let Some(synth) = &self.target.synth else {
            bail!("config has no [target.synth] section");
        };
        let mut theta = spec.prior_mean();
        if let Some(c) = &synth.theta_c {
            theta.theta_c = c.clone();
        }
        if let Some(d) = &synth.theta_d {
            theta.theta_d = d.clone();
        }
        for (name, &v) in &synth.values {
            let i = spec.index_of(name).with_context(|| format!("unknown parameter `{name}` in [target.synth.values]"))?;
            if i < theta.theta_c.len() {
                theta.theta_c[i] = v;
            }
        }
        spec.validate(&theta)?;
        Ok(theta)
    }

    pub fn synth_seed(&self) -> u64 {
        self.target.synth.as_ref().and_then(|s| s.seed).unwrap_or(self.seed)
    }

    /// Check invariants that do not need the filesystem beyond existence.
    pub fn validate(&self) -> anyhow::Result<()> {
        self.spec()?;
        self.rig()?;
        self.sampler.validate()?;
        if !self.resolution.is_power_of_two() || self.resolution < 4 {
            bail!("resolution {} must be a power of two >= 4", self.resolution);
        }
        if let Some(p) = &self.target.image {
            if !p.exists() {
                bail!("target image {} does not exist", p.display());
            }
        }
        if let Some(p) = &self.init_from {
            if !p.exists() {
                bail!("initial record {} does not exist", p.display());
            }
        }
        for c in self.summary.iter().flatten() {
            if let SummaryComponent::Gram { weights_file: Some(p), .. } = c {
                if !p.exists() {
                    bail!("weights file {} does not exist", p.display());
                }
            }
        }
        Ok(())
    }
}

fn load_net(path: &Path) -> anyhow::Result<Arc<FeatureNet>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening weights file {}", path.display()))?;
    let net = FeatureNet::read_from(std::io::BufReader::new(file)).with_context(|| format!("loading weights file {}", path.display()))?;
    Ok(Arc::new(net))
}
