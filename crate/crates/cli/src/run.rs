//! Command implementations: synth, fit, sample, render and export.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use matinfer_core::diff::Tape;
use matinfer_core::materials::{generate_at, ModelKind, ModelSpec, ParamVector, RandomInputs};
use matinfer_core::posterior::{to_unconstrained, Posterior};
use matinfer_core::render::{render_collocated, CameraRig};
use matinfer_core::sampler::{map_estimate, run_chain, ChainStats, MapResult};
use matinfer_core::Grid;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chain::{read_chain, ChainWriter, RunManifest};
use crate::config::RunConfig;
use crate::image_io::{load_image, quantize_f32, save_image};

pub const TARGET_EXR: &str = "target.exr";
pub const TARGET_PNG: &str = "target.png";
pub const THETA_STAR: &str = "theta_star.json";
pub const MAP_RECORD: &str = "map.json";

/// A parameter vector on disk, optionally with its evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaRecord {
    pub model: ModelKind,
    #[serde(default)]
    pub names: Vec<String>,
    pub theta_c: Vec<f64>,
    pub theta_d: Vec<usize>,
    /// Negative log posterior in bounded space.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nlp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_term: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diverged: Option<bool>,
    /// Optimizer objective per iteration, in unconstrained space.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<f64>,
}

impl ThetaRecord {
    pub fn new(spec: &ModelSpec, theta: &ParamVector) -> Self {
        Self {
            model: spec.model,
            names: spec.names().iter().map(|s| s.to_string()).collect(),
            theta_c: theta.theta_c.clone(),
            theta_d: theta.theta_d.clone(),
            nlp: None,
            data_term: None,
            diverged: None,
            trace: Vec::new(),
        }
    }

    pub fn theta(&self) -> ParamVector {
        ParamVector { theta_c: self.theta_c.clone(), theta_d: self.theta_d.clone() }
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading parameter record {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing parameter record {}", path.display()))
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).with_context(|| format!("writing {}", path.display()))
    }

    /// Parameters checked against `spec`.
    pub fn for_spec(&self, spec: &ModelSpec) -> anyhow::Result<ParamVector> {
        if self.model != spec.model {
            bail!("record is for model {}, config uses {}", self.model, spec.model);
        }
        let theta = self.theta();
        spec.validate(&theta)?;
        Ok(theta)
    }
}

/// Render `theta` under random inputs `z`.
pub fn render_image(spec: &ModelSpec, z: &RandomInputs, rig: &CameraRig, theta: &ParamVector) -> anyhow::Result<Grid> {
    let tape = Tape::new();
    let maps = generate_at(&tape, spec, theta, z, rig)?;
    let img = render_collocated(&maps, rig).value();
    if let Some(fault) = tape.fault() {
        bail!("rendering produced a non-finite value: {fault}");
    }
    Ok(img)
}

/// Resolved pieces shared by the commands.
pub struct Setup {
    pub cfg: RunConfig,
    pub spec: ModelSpec,
    pub rig: CameraRig,
    /// Random inputs for inference and rendering.
    pub z: Arc<RandomInputs>,
}

impl Setup {
    pub fn new(cfg: &RunConfig) -> anyhow::Result<Self> {
        cfg.validate()?;
        let spec = cfg.spec()?;
        let rig = cfg.rig()?;
        let z = Arc::new(RandomInputs::generate(cfg.seed, cfg.resolution)?);
        Ok(Self { cfg: cfg.clone(), spec, rig, z })
    }

    pub fn out(&self) -> &Path {
        &self.cfg.out
    }

    fn create_out(&self) -> anyhow::Result<()> {
        std::fs::create_dir_all(self.out()).with_context(|| format!("creating output directory {}", self.out().display()))
    }

    pub fn target_path(&self) -> PathBuf {
        self.cfg.target.image.clone().unwrap_or_else(|| self.out().join(TARGET_EXR))
    }

    pub fn load_target(&self) -> anyhow::Result<Grid> {
        let path = self.target_path();
        if !path.exists() {
            bail!("no target image at {}; set target.image or run `synth` first", path.display());
        }
        let img = load_image(&path)?;
        let n = self.cfg.resolution;
        let s = img.shape();
        if s.height != n || s.width != n {
            bail!("target {} is {}x{}, expected {n}x{n}", path.display(), s.width, s.height);
        }
        Ok(img)
    }

    pub fn posterior(&self, target: &Grid) -> anyhow::Result<Posterior> {
        let summary = self.cfg.summary()?;
        Ok(Posterior::for_image(self.spec.clone(), self.z.clone(), self.rig, summary, target, &self.cfg.error)?)
    }

    fn initial(&self) -> anyhow::Result<Option<ParamVector>> {
        match &self.cfg.init_from {
            Some(path) => Ok(Some(ThetaRecord::read(path)?.for_spec(&self.spec)?)),
            None => Ok(None),
        }
    }
}

pub struct SynthOutput {
    /// The target as stored, rounded to `f32`.
    pub image: Grid,
    pub theta: ParamVector,
}

/// Render the synthetic target and write it with its ground truth.
pub fn synth(cfg: &RunConfig) -> anyhow::Result<SynthOutput> {
    let setup = Setup::new(cfg)?;
    let theta = cfg.synth_theta(&setup.spec)?;
    let z = if cfg.synth_seed() == cfg.seed {
        setup.z.clone()
    } else {
        Arc::new(RandomInputs::generate(cfg.synth_seed(), cfg.resolution)?)
    };
    let image = quantize_f32(&render_image(&setup.spec, &z, &setup.rig, &theta)?);
    setup.create_out()?;
    save_image(&image, &setup.out().join(TARGET_EXR))?;
    save_image(&image, &setup.out().join(TARGET_PNG))?;
    ThetaRecord::new(&setup.spec, &theta).write(&setup.out().join(THETA_STAR))?;
    log::info!("wrote synthetic {} target to {}", cfg.model, setup.out().display());
    Ok(SynthOutput { image, theta })
}

fn start_point(setup: &Setup, post: &Posterior) -> anyhow::Result<(Vec<f64>, Vec<usize>)> {
    let theta = setup.initial()?.unwrap_or_else(|| setup.spec.prior_mean());
    let u = to_unconstrained(&theta.theta_c, &post.spec).context("initial parameters")?;
    Ok((u, theta.theta_d))
}

fn map_record(post: &Posterior, result: &MapResult) -> anyhow::Result<ThetaRecord> {
    let theta = ParamVector { theta_c: result.theta_c.clone(), theta_d: result.theta_d.clone() };
    let terms = post.terms(&theta)?;
    let mut record = ThetaRecord::new(&post.spec, &theta);
    record.nlp = Some(terms.nlp());
    record.data_term = Some(terms.data);
    record.diverged = Some(result.diverged);
    record.trace = result.trace.clone();
    Ok(record)
}

fn run_map(setup: &Setup, post: &Posterior) -> anyhow::Result<ThetaRecord> {
    let (u0, d) = start_point(setup, post)?;
    let result = map_estimate(&setup.cfg.map.optimizer(), post, &u0, &d).context("MAP estimation")?;
    let record = map_record(post, &result)?;
    setup.create_out()?;
    record.write(&setup.out().join(MAP_RECORD))?;
    log::info!("MAP nlp {:.6} after {} iterations", result.nlp, result.trace.len());
    Ok(record)
}

/// MAP estimate from the configured initial point (or the prior mean).
pub fn fit(cfg: &RunConfig) -> anyhow::Result<ThetaRecord> {
    let setup = Setup::new(cfg)?;
    let target = setup.load_target()?;
    let post = setup.posterior(&target)?;
    run_map(&setup, &post)
}

fn target_hash(target: &Grid) -> String {
    let mut h = Sha256::new();
    for v in target.data() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub struct SampleOutput {
    pub chain_id: String,
    pub chain_path: PathBuf,
    pub stats: ChainStats,
}

/// Default chain id for a sampler seed.
pub fn chain_id(sampler_seed: u64) -> String {
    format!("seed-{sampler_seed}")
}

/// Run one chain, writing samples as they are produced. Starts from the
/// initial record when given, otherwise from a MAP estimate when enabled,
/// otherwise from the prior mean.
pub fn sample(cfg: &RunConfig) -> anyhow::Result<SampleOutput> {
    let setup = Setup::new(cfg)?;
    let target = setup.load_target()?;
    let post = setup.posterior(&target)?;
    let (u0, d0) = if cfg.init_from.is_none() && cfg.map.before_sampling {
        let record = run_map(&setup, &post)?;
        (to_unconstrained(&record.theta_c, &post.spec).context("MAP result")?, record.theta_d)
    } else {
        start_point(&setup, &post)?
    };

    let id = chain_id(cfg.sampler.seed);
    setup.create_out()?;
    let chain_path = RunManifest::chain_path(setup.out(), &id);
    let mut writer = ChainWriter::create(&chain_path)?;
    let mut manifest = RunManifest {
        chain_id: id.clone(),
        model: cfg.model,
        model_manifest_hash: setup.spec.manifest_hash(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        sampler_seed: cfg.sampler.seed,
        resolution: cfg.resolution,
        code_version: crate::chain::code_version(),
        target_hash: target_hash(&target),
        samples: cfg.sampler.samples,
        burn_in: cfg.sampler.burn_in,
        stats: None,
    };
    manifest.write(setup.out())?;
    let config_path = setup.out().join(crate::chain::CHAIN_DIR).join(format!("{id}.config.toml"));
    std::fs::write(&config_path, cfg.to_toml()).with_context(|| format!("writing {}", config_path.display()))?;

    let stats = run_chain(&cfg.sampler, &post, &u0, &d0, |s| {
        writer.append(s).map_err(|e| matinfer_core::Error::Invalid(format!("{e:#}")))
    })
    .with_context(|| format!("sampling chain {id}"))?;
    log::info!(
        "chain {id}: {} samples, acceptance {:.3}, tau {:.4}",
        writer.written(),
        stats.acceptance_rate(),
        stats.tau
    );
    manifest.stats = Some(stats.clone());
    manifest.write(setup.out())?;
    Ok(SampleOutput { chain_id: id, chain_path, stats })
}

/// Render a parameter record to `<out>/render.exr` and `<out>/render.png`.
pub fn render(cfg: &RunConfig, record: &Path) -> anyhow::Result<Grid> {
    let setup = Setup::new(cfg)?;
    let theta = ThetaRecord::read(record)?.for_spec(&setup.spec)?;
    let image = quantize_f32(&render_image(&setup.spec, &setup.z, &setup.rig, &theta)?);
    setup.create_out()?;
    save_image(&image, &setup.out().join("render.exr"))?;
    save_image(&image, &setup.out().join("render.png"))?;
    Ok(image)
}

/// Write the model manifest and every chain as CSV under `<out>/export`.
pub fn export(cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    let spec = cfg.spec()?;
    let dir = cfg.out.join("export");
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("manifest.json"), spec.manifest_json())?;
    for id in crate::chain::list_chains(&cfg.out)? {
        let samples = read_chain(&RunManifest::chain_path(&cfg.out, &id))?;
        let mut csv = String::from("t");
        for name in spec.names() {
            csv.push(',');
            csv.push_str(name);
        }
        for d in &spec.discrete {
            csv.push(',');
            csv.push_str(&d.name);
        }
        csv.push_str(",nlp,accepted\n");
        for s in &samples {
            csv.push_str(&s.t.to_string());
            for v in &s.theta_c {
                csv.push_str(&format!(",{v:e}"));
            }
            for v in &s.theta_d {
                csv.push_str(&format!(",{v}"));
            }
            csv.push_str(&format!(",{:e},{}\n", s.nlp, s.accepted));
        }
        std::fs::write(dir.join(format!("{id}.csv")), csv)?;
    }
    Ok(dir)
}
