//! Command-line runs and the HTTP service for material parameter inference.

pub mod chain;
pub mod config;
pub mod image_io;
pub mod run;
pub mod service;

use std::path::PathBuf;

use config::RunConfig;

/// Values from command-line flags that override config fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub resolution: Option<usize>,
    pub init_from: Option<PathBuf>,
}

impl Overrides {
    /// A seed flag reseeds both the random inputs and the sampler.
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.sampler.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(n) = self.resolution {
            cfg.resolution = n;
        }
        if let Some(p) = &self.init_from {
            cfg.init_from = Some(p.clone());
        }
    }
}
