use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ModelKind;
use crate::error::{Error, Result};

/// Bump whenever a model's parameter layout or priors change.
pub const MANIFEST_VERSION: u32 = 1;

/// A continuous parameter with a truncated Gaussian prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousParam {
    pub name: String,
    pub role: String,
    pub mean: f64,
    pub std: f64,
    pub low: f64,
    pub high: f64,
}

/// A categorical parameter; cardinality is `pmf.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteParam {
    pub name: String,
    pub role: String,
    pub pmf: Vec<f64>,
}

impl DiscreteParam {
    pub fn cardinality(&self) -> usize {
        self.pmf.len()
    }
}

/// Parameter layout, priors and fixed constants of one model. Serialized as
/// the model manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model: ModelKind,
    pub version: u32,
    pub continuous: Vec<ContinuousParam>,
    pub discrete: Vec<DiscreteParam>,
    /// Known quantities that are not inferred.
    pub constants: BTreeMap<String, f64>,
}

/// Parameter values `θ = (θc, θd)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub theta_c: Vec<f64>,
    pub theta_d: Vec<usize>,
}

pub(crate) fn cparam(name: &str, role: &str, mean: f64, std: f64, low: f64, high: f64) -> ContinuousParam {
    ContinuousParam { name: name.into(), role: role.into(), mean, std, low, high }
}

pub(crate) fn dparam(name: &str, role: &str, cardinality: usize) -> DiscreteParam {
    DiscreteParam { name: name.into(), role: role.into(), pmf: vec![1.0 / cardinality as f64; cardinality] }
}

impl ModelSpec {
    pub fn dim_c(&self) -> usize {
        self.continuous.len()
    }

    pub fn dim_d(&self) -> usize {
        self.discrete.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.continuous.iter().position(|p| p.name == name)
    }

    pub fn discrete_index_of(&self, name: &str) -> Option<usize> {
        self.discrete.iter().position(|p| p.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.continuous.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn constant(&self, name: &str) -> f64 {
        self.constants[name]
    }

    /// Continuous values at their prior means, first choice for every
    /// discrete parameter.
    pub fn prior_mean(&self) -> ParamVector {
        ParamVector {
            theta_c: self.continuous.iter().map(|p| p.mean).collect(),
            theta_d: vec![0; self.discrete.len()],
        }
    }

    /// Draw from the prior. Continuous values are rejection-sampled from the
    /// truncated Gaussian, falling back to a uniform draw when the truncation
    /// window holds little prior mass.
    pub fn sample_prior<R: Rng>(&self, rng: &mut R) -> ParamVector {
        let theta_c = self
            .continuous
            .iter()
            .map(|p| {
                let normal = Normal::new(p.mean, p.std).expect("finite prior");
                for _ in 0..1000 {
                    let v = normal.sample(rng);
                    if v > p.low && v < p.high {
                        return v;
                    }
                }
                rng.random_range(p.low..p.high)
            })
            .collect();
        let theta_d = self
            .discrete
            .iter()
            .map(|d| {
                let mut r: f64 = rng.random();
                for (i, &p) in d.pmf.iter().enumerate() {
                    if r < p {
                        return i;
                    }
                    r -= p;
                }
                d.pmf.len() - 1
            })
            .collect();
        ParamVector { theta_c, theta_d }
    }

    /// Check dimensions, closed truncation bounds and discrete ranges.
    pub fn validate(&self, theta: &ParamVector) -> Result<()> {
        self.validate_with_slack(theta, 0.0)
    }

    /// Like [`validate`](Self::validate) but allows continuous values to
    /// overshoot their bounds by `slack` times the interval width.
    pub fn validate_with_slack(&self, theta: &ParamVector, slack: f64) -> Result<()> {
        if theta.theta_c.len() != self.dim_c() {
            return Err(Error::Count { what: "continuous parameters", expected: self.dim_c(), got: theta.theta_c.len() });
        }
        if theta.theta_d.len() != self.dim_d() {
            return Err(Error::Count { what: "discrete parameters", expected: self.dim_d(), got: theta.theta_d.len() });
        }
        for (p, &v) in self.continuous.iter().zip(&theta.theta_c) {
            let eps = slack * (p.high - p.low);
            if !(v >= p.low - eps && v <= p.high + eps) {
                return Err(Error::OutOfBounds { name: p.name.clone(), value: v, low: p.low, high: p.high });
            }
        }
        for (d, &v) in self.discrete.iter().zip(&theta.theta_d) {
            if v >= d.cardinality() {
                return Err(Error::BadChoice { name: d.name.clone(), value: v, cardinality: d.cardinality() });
            }
        }
        Ok(())
    }

    /// Check the structural invariants of the spec itself.
    pub fn check(&self) -> Result<()> {
        for p in &self.continuous {
            if !(p.low < p.high && p.std > 0.0 && p.mean.is_finite()) {
                return Err(Error::Invalid(format!("bad prior for `{}`", p.name)));
            }
        }
        for d in &self.discrete {
            let total: f64 = d.pmf.iter().sum();
            if d.pmf.is_empty() || (total - 1.0).abs() > 1e-9 || d.pmf.iter().any(|&p| p < 0.0) {
                return Err(Error::Invalid(format!("pmf of `{}` must be a distribution", d.name)));
            }
        }
        Ok(())
    }

    /// Human-readable manifest.
    pub fn manifest_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// SHA-256 of the manifest text, hex encoded.
    pub fn manifest_hash(&self) -> String {
        hex::encode(Sha256::digest(self.manifest_json().as_bytes()))
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_str(text).map_err(|e| Error::Invalid(format!("manifest: {e}")))?;
        spec.check()?;
        Ok(spec)
    }

    /// Replace prior mean/std/bounds of the named parameter.
    pub fn override_prior(&mut self, name: &str, mean: Option<f64>, std: Option<f64>, low: Option<f64>, high: Option<f64>) -> Result<()> {
        let i = self.index_of(name).ok_or_else(|| Error::Invalid(format!("unknown parameter `{name}`")))?;
        let p = &mut self.continuous[i];
        p.mean = mean.unwrap_or(p.mean);
        p.std = std.unwrap_or(p.std);
        p.low = low.unwrap_or(p.low);
        p.high = high.unwrap_or(p.high);
        self.check()
    }
}
