//! Priors, the summary error model and the negative log posterior, with the
//! scaled-logit map between bounded parameters and unconstrained space.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diff::{sigmoid, DiffError, Tape, Var};
use crate::error::{Error, Result};
use crate::grid::{Grid, Shape};
use crate::materials::{generate, ContinuousParam, ModelSpec, ParamVector, RandomInputs};
use crate::render::{render_collocated, CameraRig};
use crate::summary::{Summary, SummaryVector};

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Map bounded values into unconstrained space. Values must lie strictly
/// inside their bounds.
pub fn to_unconstrained(theta_c: &[f64], spec: &ModelSpec) -> Result<Vec<f64>> {
    check_len(theta_c.len(), spec)?;
    spec.continuous
        .iter()
        .zip(theta_c)
        .map(|(p, &v)| {
            if !(v >= p.low && v <= p.high) {
                return Err(Error::OutOfBounds { name: p.name.clone(), value: v, low: p.low, high: p.high });
            }
            if v == p.low || v == p.high {
                return Err(Error::OnBoundary { name: p.name.clone(), value: v, low: p.low, high: p.high });
            }
            let t = (v - p.low) / (p.high - p.low);
            Ok(t.ln() - (-t).ln_1p())
        })
        .collect()
}

/// Inverse of [`to_unconstrained`] together with `ln |det ∂θ/∂u|`.
/// Results are clamped to the closed bounds.
pub fn from_unconstrained(u: &[f64], spec: &ModelSpec) -> (Vec<f64>, f64) {
    let theta = spec
        .continuous
        .iter()
        .zip(u)
        .map(|(p, &x)| (p.low + (p.high - p.low) * sigmoid(x)).clamp(p.low, p.high))
        .collect();
    (theta, log_jacobian(u, spec))
}

pub fn log_jacobian(u: &[f64], spec: &ModelSpec) -> f64 {
    spec.continuous.iter().zip(u).map(|(p, &x)| (p.high - p.low).ln() - softplus(-x) - softplus(x)).sum()
}

/// Standard normal CDF.
fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Log of the prior mass inside the truncation window.
fn log_truncation_mass(p: &ContinuousParam) -> f64 {
    let a = (p.low - p.mean) / p.std;
    let b = (p.high - p.mean) / p.std;
    // use the upper tail when both bounds sit above the mean to keep precision
    if a > 0.0 {
        (normal_cdf(-a) - normal_cdf(-b)).ln()
    } else {
        (normal_cdf(b) - normal_cdf(a)).ln()
    }
}

/// Truncated Gaussian log density of one continuous parameter.
pub fn log_prior_continuous(p: &ContinuousParam, v: f64) -> f64 {
    if !(v >= p.low && v <= p.high) {
        return f64::NEG_INFINITY;
    }
    let z = (v - p.mean) / p.std;
    -0.5 * z * z - p.std.ln() - 0.5 * (2.0 * PI).ln() - log_truncation_mass(p)
}

/// Sum of truncated Gaussian log densities and discrete log masses; `-∞`
/// outside the support.
pub fn log_prior(theta: &ParamVector, spec: &ModelSpec) -> f64 {
    if theta.theta_c.len() != spec.dim_c() || theta.theta_d.len() != spec.dim_d() {
        return f64::NEG_INFINITY;
    }
    let continuous: f64 = spec.continuous.iter().zip(&theta.theta_c).map(|(p, &v)| log_prior_continuous(p, v)).sum();
    let discrete: f64 = spec
        .discrete
        .iter()
        .zip(&theta.theta_d)
        .map(|(d, &i)| d.pmf.get(i).map_or(f64::NEG_INFINITY, |m| m.ln()))
        .sum();
    continuous + discrete
}

fn check_len(n: usize, spec: &ModelSpec) -> Result<()> {
    if n != spec.dim_c() {
        return Err(Error::Count { what: "continuous parameters", expected: spec.dim_c(), got: n });
    }
    Ok(())
}

/// Diagonal Gaussian summary error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorModel {
    pub sigma_e: Vec<f64>,
}

impl ErrorModel {
    pub fn new(sigma_e: Vec<f64>) -> Result<Self> {
        if sigma_e.is_empty() || sigma_e.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Invalid("error model entries must be finite and positive".into()));
        }
        Ok(Self { sigma_e })
    }

    pub fn len(&self) -> usize {
        self.sigma_e.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma_e.is_empty()
    }

    /// Quadratic data term `0.5 Σ ((a - b) / σ)²`.
    pub fn data_term(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).zip(&self.sigma_e).map(|((x, y), s)| ((x - y) / s).powi(2)).sum::<f64>() * 0.5
    }
}

/// How to derive an [`ErrorModel`] from a target summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorSettings {
    /// Standard deviation as a fraction of each component's RMS magnitude.
    pub relative: f64,
    /// Lower bound on every standard deviation.
    pub floor: f64,
    /// Absolute standard deviations for named components.
    pub overrides: BTreeMap<String, f64>,
}

impl Default for ErrorSettings {
    fn default() -> Self {
        Self { relative: 0.05, floor: 1e-3, overrides: BTreeMap::new() }
    }
}

impl ErrorSettings {
    /// Per-component standard deviations. Magnitudes are measured before the
    /// component weight is applied, so a weight `w` scales that component's
    /// share of the data term by `w²`. Overrides are in summary units.
    pub fn build(&self, target: &SummaryVector) -> Result<ErrorModel> {
        if let Some(name) = self.overrides.keys().find(|n| !target.layout.iter().any(|c| &c.name == *n)) {
            return Err(Error::Invalid(format!("error override for unknown summary component `{name}`")));
        }
        let mut sigma = vec![0.0; target.len()];
        for c in &target.layout {
            let values = &target.values[c.offset..c.offset + c.len];
            let s = match self.overrides.get(&c.name) {
                Some(&s) => s,
                None => {
                    let rms = if c.weight > 0.0 {
                        (values.iter().map(|v| v * v).sum::<f64>() / c.len.max(1) as f64).sqrt() / c.weight
                    } else {
                        0.0
                    };
                    (self.relative * rms).max(self.floor)
                }
            };
            sigma[c.offset..c.offset + c.len].fill(s);
        }
        ErrorModel::new(sigma)
    }
}

/// Value and unconstrained-space gradient of a negative log density.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub nlp: f64,
    pub grad_u: Vec<f64>,
}

/// A target density over unconstrained continuous coordinates and discrete
/// choices, as consumed by the samplers.
pub trait Density {
    fn dim_c(&self) -> usize;

    /// Number of choices per discrete coordinate.
    fn cardinalities(&self) -> Vec<usize>;

    /// Negative log density (up to a constant) and its gradient in `u`.
    fn evaluate(&self, u: &[f64], theta_d: &[usize]) -> Result<Evaluation>;

    /// Bounded parameter values for storage.
    fn theta_c(&self, u: &[f64]) -> Vec<f64> {
        u.to_vec()
    }

    /// `ln |det ∂θ/∂u|`, added back to report bounded-space values.
    fn log_jacobian(&self, _u: &[f64]) -> f64 {
        0.0
    }
}

/// Posterior over the parameters of one model given a target summary.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub spec: ModelSpec,
    pub z: Arc<RandomInputs>,
    pub rig: CameraRig,
    pub summary: Summary,
    pub target: SummaryVector,
    pub error: ErrorModel,
}

/// Breakdown of one posterior evaluation in bounded space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Terms {
    pub data: f64,
    pub log_prior: f64,
}

impl Terms {
    pub fn nlp(&self) -> f64 {
        self.data - self.log_prior
    }
}

impl Posterior {
    pub fn new(
        spec: ModelSpec,
        z: Arc<RandomInputs>,
        rig: CameraRig,
        summary: Summary,
        target: SummaryVector,
        error: ErrorModel,
    ) -> Result<Self> {
        spec.check()?;
        if error.len() != target.len() {
            return Err(Error::Count { what: "error model entries", expected: target.len(), got: error.len() });
        }
        if z.size != rig.resolution {
            return Err(Error::Invalid(format!("random input size {} differs from resolution {}", z.size, rig.resolution)));
        }
        Ok(Self { spec, z, rig, summary, target, error })
    }

    /// Posterior for a target image using the default error settings.
    pub fn for_image(
        spec: ModelSpec,
        z: Arc<RandomInputs>,
        rig: CameraRig,
        summary: Summary,
        image: &Grid,
        settings: &ErrorSettings,
    ) -> Result<Self> {
        let n = rig.resolution;
        if image.shape() != Shape::new(n, n, 3) {
            return Err(Error::Invalid(format!("target image {} does not match resolution {n}", image.shape())));
        }
        let target = summary.evaluate(image)?;
        let error = settings.build(&target)?;
        Self::new(spec, z, rig, summary, target, error)
    }

    /// Render the image for `theta` with this posterior's random inputs.
    pub fn render(&self, theta: &ParamVector) -> Result<Grid> {
        let tape = Tape::new();
        let v = tape.constant(Grid::from_vec(theta.theta_c.clone()));
        let img = self.image_var(v, &theta.theta_d)?;
        self.finite(&tape, theta)?;
        Ok(img.value())
    }

    fn image_var<'t>(&self, theta_c: Var<'t>, theta_d: &[usize]) -> Result<Var<'t>> {
        let maps = generate(&self.spec, theta_c, theta_d, &self.z, &self.rig)?;
        Ok(render_collocated(&maps, &self.rig))
    }

    fn data_var<'t>(&self, theta_c: Var<'t>, theta_d: &[usize]) -> Result<Var<'t>> {
        let tape = theta_c.tape();
        let img = self.image_var(theta_c, theta_d)?;
        let (s, layout) = self.summary.apply(img)?;
        if layout != self.target.layout {
            return Err(Error::Invalid("target summary layout does not match the summary recipe".into()));
        }
        let shape = s.shape();
        let target = tape.constant(Grid::new(shape, self.target.values.clone()));
        let inv_sigma = tape.constant(Grid::new(shape, self.error.sigma_e.iter().map(|s| 1.0 / s).collect()));
        Ok(((s - target) * inv_sigma).square().sum() * 0.5)
    }

    fn finite(&self, tape: &Tape, theta: &ParamVector) -> Result<()> {
        match tape.fault() {
            Some(source) => Err(Error::NonFiniteEvaluation {
                theta_c: theta.theta_c.clone(),
                theta_d: theta.theta_d.clone(),
                source,
            }),
            None => Ok(()),
        }
    }

    /// Data and prior terms at bounded parameters.
    pub fn terms(&self, theta: &ParamVector) -> Result<Terms> {
        self.spec.validate(theta)?;
        let tape = Tape::new();
        let v = tape.constant(Grid::from_vec(theta.theta_c.clone()));
        let data = self.data_var(v, &theta.theta_d)?;
        self.finite(&tape, theta)?;
        Ok(Terms { data: data.item(), log_prior: log_prior(theta, &self.spec) })
    }

    /// `0.5 ‖(S(f(θ, z)) - S_target) / σ‖² - ln p(θ)` in bounded space.
    pub fn neg_log_posterior(&self, theta: &ParamVector) -> Result<f64> {
        Ok(self.terms(theta)?.nlp())
    }

    pub fn params(&self, u: &[f64], theta_d: &[usize]) -> ParamVector {
        ParamVector { theta_c: from_unconstrained(u, &self.spec).0, theta_d: theta_d.to_vec() }
    }
}

impl Density for Posterior {
    fn dim_c(&self) -> usize {
        self.spec.dim_c()
    }

    fn cardinalities(&self) -> Vec<usize> {
        self.spec.discrete.iter().map(|d| d.cardinality()).collect()
    }

    /// Negative log posterior in unconstrained space, including the
    /// log-Jacobian of the bounded map.
    fn evaluate(&self, u: &[f64], theta_d: &[usize]) -> Result<Evaluation> {
        check_len(u.len(), &self.spec)?;
        let theta = self.params(u, theta_d);
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invalid(format!("non-finite unconstrained coordinates {u:?}")));
        }
        let tape = Tape::new();
        let uv = tape.input(Grid::from_vec(u.to_vec()));
        let lows: Vec<f64> = self.spec.continuous.iter().map(|p| p.low).collect();
        let widths: Vec<f64> = self.spec.continuous.iter().map(|p| p.high - p.low).collect();
        let theta_var = uv.sigmoid() * tape.constant(Grid::from_vec(widths)) + tape.constant(Grid::from_vec(lows));
        let data = self.data_var(theta_var, theta_d)?;
        self.finite(&tape, &theta)?;
        let grads = tape.backward(data).map_err(|source| Error::NonFiniteEvaluation {
            theta_c: theta.theta_c.clone(),
            theta_d: theta.theta_d.clone(),
            source,
        })?;
        let mut grad_u = grads.wrt(uv).into_data();

        // prior and Jacobian terms have closed-form derivatives
        let nlp = data.item() - log_prior(&theta, &self.spec) - log_jacobian(u, &self.spec);
        for ((g, p), (&x, &t)) in grad_u.iter_mut().zip(&self.spec.continuous).zip(u.iter().zip(&theta.theta_c)) {
            let s = sigmoid(x);
            let dtheta = (p.high - p.low) * s * (1.0 - s);
            *g += (t - p.mean) / (p.std * p.std) * dtheta - (1.0 - 2.0 * s);
        }
        if !nlp.is_finite() || grad_u.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteEvaluation {
                theta_c: theta.theta_c,
                theta_d: theta.theta_d,
                source: DiffError::NonFinite { primitive: "neg_log_posterior", node: tape.len() },
            });
        }
        Ok(Evaluation { nlp, grad_u })
    }

    fn theta_c(&self, u: &[f64]) -> Vec<f64> {
        from_unconstrained(u, &self.spec).0
    }

    fn log_jacobian(&self, u: &[f64]) -> f64 {
        log_jacobian(u, &self.spec)
    }
}
