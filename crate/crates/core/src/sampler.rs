//! Mixed discrete/continuous MCMC (preconditioned MALA plus uniform discrete
//! resampling, each followed by a Metropolis-Hastings test) and MAP point
//! estimation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::{Density, Evaluation};

/// Burn-in length used when none is configured.
pub const DEFAULT_BURN_IN: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Total number of stored samples, burn-in included.
    pub samples: usize,
    /// Probability of a continuous move. Defaults to 0.9 when discrete
    /// parameters exist and 1 otherwise.
    pub alpha: Option<f64>,
    /// Fixed MALA step size. When unset, the step is tuned during burn-in.
    pub tau: Option<f64>,
    /// Starting step for tuning.
    pub initial_tau: f64,
    pub burn_in: usize,
    /// Continuous moves per step-size tuning window.
    pub tune_window: usize,
    /// Adapt the diagonal preconditioner during burn-in; identity otherwise.
    pub precondition: bool,
    pub decay: f64,
    pub epsilon: f64,
    /// Consecutive failed evaluations before the chain aborts.
    pub max_failures: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            samples: 2000,
            alpha: None,
            tau: None,
            initial_tau: 0.05,
            burn_in: DEFAULT_BURN_IN,
            tune_window: 50,
            precondition: true,
            decay: 0.99,
            epsilon: 1e-8,
            max_failures: 50,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    /// Effective continuous-move probability for a density shape.
    pub fn alpha_for(&self, dim_c: usize, dim_d: usize) -> Result<f64> {
        let alpha = match (self.alpha, dim_c, dim_d) {
            (Some(a), _, _) => a,
            (None, _, 0) => 1.0,
            (None, 0, _) => 0.0,
            (None, _, _) => 0.9,
        };
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Invalid(format!("alpha {alpha} outside [0, 1]")));
        }
        if alpha < 1.0 && dim_d == 0 {
            return Err(Error::Invalid("alpha < 1 requires discrete parameters".into()));
        }
        if alpha > 0.0 && dim_c == 0 {
            return Err(Error::Invalid("alpha > 0 requires continuous parameters".into()));
        }
        Ok(alpha)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.burn_in >= self.samples {
            return Err(Error::Invalid(format!("burn-in {} must be below sample count {}", self.burn_in, self.samples)));
        }
        let tau = self.tau.unwrap_or(self.initial_tau);
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Invalid(format!("step size {tau} must be positive")));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) || !(self.epsilon > 0.0) {
            return Err(Error::Invalid("preconditioner needs 0 < decay < 1 and epsilon > 0".into()));
        }
        if self.tune_window == 0 || self.max_failures == 0 {
            return Err(Error::Invalid("tune window and failure limit must be positive".into()));
        }
        Ok(())
    }
}

/// Diagonal RMSProp-style preconditioner `M = 1 / (sqrt(v) + ε)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preconditioner {
    pub v: Vec<f64>,
    pub decay: f64,
    pub epsilon: f64,
    pub frozen: bool,
}

impl Preconditioner {
    pub fn identity(dim: usize) -> Self {
        Self { v: vec![1.0; dim], decay: 0.99, epsilon: 0.0, frozen: true }
    }

    /// Start from the squared initial gradient, using 1 for zero entries.
    pub fn from_gradient(g: &[f64], decay: f64, epsilon: f64) -> Self {
        let v = g.iter().map(|x| if *x == 0.0 { 1.0 } else { x * x }).collect();
        Self { v, decay, epsilon, frozen: false }
    }

    pub fn update(&mut self, g: &[f64]) {
        if self.frozen {
            return;
        }
        for (v, x) in self.v.iter_mut().zip(g) {
            *v = self.decay * *v + (1.0 - self.decay) * x * x;
        }
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Entries of `M`.
    pub fn scale(&self) -> Vec<f64> {
        self.v.iter().map(|v| 1.0 / (v.sqrt() + self.epsilon)).collect()
    }
}

/// Deterministic part of a MALA step with explicit noise `xi`.
pub fn mala_step(u: &[f64], grad_log_p: &[f64], tau: f64, m: &[f64], xi: &[f64]) -> Vec<f64> {
    (0..u.len())
        .map(|i| u[i] + 0.5 * tau * m[i] * grad_log_p[i] + (tau * m[i]).sqrt() * xi[i])
        .collect()
}

/// `ln q(to | from)` for the MALA proposal, dropping the constant shared by
/// forward and reverse moves.
pub fn mala_log_q(to: &[f64], from: &[f64], grad_log_p_from: &[f64], tau: f64, m: &[f64]) -> f64 {
    (0..to.len())
        .map(|i| {
            let mean = from[i] + 0.5 * tau * m[i] * grad_log_p_from[i];
            -(to[i] - mean).powi(2) / (2.0 * tau * m[i])
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MalaProposal {
    pub u: Vec<f64>,
    pub log_q_forward: f64,
}

/// Draw a MALA proposal. The reverse density needs the gradient at the
/// proposed point; see [`mala_log_q`].
pub fn mala_propose<R: Rng>(u: &[f64], grad_log_p: &[f64], tau: f64, m: &[f64], rng: &mut R) -> MalaProposal {
    let xi: Vec<f64> = (0..u.len()).map(|_| rng.sample(StandardNormal)).collect();
    let next = mala_step(u, grad_log_p, tau, m, &xi);
    let log_q_forward = mala_log_q(&next, u, grad_log_p, tau, m);
    MalaProposal { u: next, log_q_forward }
}

/// Resample every discrete coordinate uniformly and independently.
pub fn discrete_propose<R: Rng>(theta_d: &[usize], cardinalities: &[usize], rng: &mut R) -> Result<Vec<usize>> {
    if theta_d.is_empty() || theta_d.len() != cardinalities.len() {
        return Err(Error::Invalid("discrete move without discrete parameters".into()));
    }
    Ok(cardinalities.iter().map(|&k| rng.random_range(0..k)).collect())
}

/// Metropolis-Hastings test with acceptance probability
/// `min(1, exp(nlp_old - nlp_new + log_q_ratio))`. Always consumes one
/// uniform draw.
pub fn mh_accept<R: Rng>(nlp_new: f64, nlp_old: f64, log_q_ratio: f64, rng: &mut R) -> bool {
    let draw: f64 = rng.random();
    if nlp_new.is_nan() || nlp_new == f64::INFINITY {
        return false;
    }
    let log_a = nlp_old - nlp_new + log_q_ratio;
    log_a >= 0.0 || draw.ln() < log_a
}

/// One stored chain state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSample {
    pub t: usize,
    pub theta_c: Vec<f64>,
    pub theta_d: Vec<usize>,
    /// Negative log posterior in bounded parameter space.
    pub nlp: f64,
    pub accepted: bool,
}

/// Run statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub samples: usize,
    pub burn_in: usize,
    pub alpha: f64,
    pub tau: f64,
    pub preconditioner: Vec<f64>,
    pub continuous_moves: usize,
    pub continuous_accepted: usize,
    pub discrete_moves: usize,
    pub discrete_accepted: usize,
    pub failed_evaluations: usize,
}

impl ChainStats {
    pub fn acceptance_rate(&self) -> f64 {
        let moves = self.continuous_moves + self.discrete_moves;
        (self.continuous_accepted + self.discrete_accepted) as f64 / moves.max(1) as f64
    }
}

#[derive(Debug, Clone)]
pub struct Chain {
    pub samples: Vec<ChainSample>,
    pub stats: ChainStats,
}

impl Chain {
    pub fn post_burn_in(&self) -> &[ChainSample] {
        &self.samples[self.stats.burn_in.min(self.samples.len())..]
    }

    /// Post-burn-in sample with the lowest nlp.
    pub fn best(&self) -> Option<&ChainSample> {
        self.post_burn_in().iter().min_by(|a, b| a.nlp.total_cmp(&b.nlp))
    }
}

struct State {
    u: Vec<f64>,
    d: Vec<usize>,
    eval: Evaluation,
}

fn neg(g: &[f64]) -> Vec<f64> {
    g.iter().map(|x| -x).collect()
}

/// Run the sampler from `(u0, d0)`, handing every sample to `sink` as it is
/// produced. Non-finite evaluations count as rejections; too many in a row
/// abort the run.
pub fn run_chain<D, F>(cfg: &SamplerConfig, density: &D, u0: &[f64], d0: &[usize], mut sink: F) -> Result<ChainStats>
where
    D: Density + ?Sized,
    F: FnMut(&ChainSample) -> Result<()>,
{
    cfg.validate()?;
    let cards = density.cardinalities();
    if u0.len() != density.dim_c() || d0.len() != cards.len() {
        return Err(Error::Invalid("initial state does not match the density".into()));
    }
    let alpha = cfg.alpha_for(u0.len(), cards.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let eval = density.evaluate(u0, d0)?;
    if !eval.nlp.is_finite() {
        return Err(Error::Invalid("initial state has non-finite posterior".into()));
    }
    let mut precond = if cfg.precondition {
        Preconditioner::from_gradient(&eval.grad_u, cfg.decay, cfg.epsilon)
    } else {
        Preconditioner::identity(u0.len())
    };
    let mut state = State { u: u0.to_vec(), d: d0.to_vec(), eval };
    let mut tau = cfg.tau.unwrap_or(cfg.initial_tau);
    let tune = cfg.tau.is_none();
    let mut stats = ChainStats {
        samples: cfg.samples,
        burn_in: cfg.burn_in,
        alpha,
        tau,
        preconditioner: Vec::new(),
        continuous_moves: 0,
        continuous_accepted: 0,
        discrete_moves: 0,
        discrete_accepted: 0,
        failed_evaluations: 0,
    };
    let (mut window_moves, mut window_accepted) = (0usize, 0usize);
    let mut failures = 0usize;

    for t in 0..cfg.samples {
        if t == cfg.burn_in {
            precond.freeze();
        }
        let continuous = alpha >= 1.0 || (alpha > 0.0 && rng.random::<f64>() < alpha);
        let (u_new, d_new, forward) = if continuous {
            let m = precond.scale();
            let prop = mala_propose(&state.u, &neg(&state.eval.grad_u), tau, &m, &mut rng);
            (prop.u, state.d.clone(), Some((prop.log_q_forward, m)))
        } else {
            (state.u.clone(), discrete_propose(&state.d, &cards, &mut rng)?, None)
        };
        let evaluated = density.evaluate(&u_new, &d_new);
        let accepted = match evaluated {
            Ok(eval) if eval.nlp.is_finite() => {
                failures = 0;
                let ratio = match &forward {
                    Some((fwd, m)) => mala_log_q(&state.u, &u_new, &neg(&eval.grad_u), tau, m) - fwd,
                    None => 0.0,
                };
                let ok = mh_accept(eval.nlp, state.eval.nlp, ratio, &mut rng);
                if ok {
                    state = State { u: u_new, d: d_new, eval };
                }
                ok
            }
            Ok(_) | Err(Error::NonFiniteEvaluation { .. }) => {
                let _ = rng.random::<f64>();
                failures += 1;
                stats.failed_evaluations += 1;
                if failures >= cfg.max_failures {
                    let detail = match evaluated {
                        Err(e) => e.to_string(),
                        Ok(_) => "non-finite posterior".into(),
                    };
                    return Err(Error::Invalid(format!(
                        "{failures} consecutive failed evaluations at t = {t}, last at theta_c = {:?}: {detail}",
                        density.theta_c(&u_new)
                    )));
                }
                false
            }
            Err(e) => return Err(e),
        };
        if continuous {
            stats.continuous_moves += 1;
            stats.continuous_accepted += accepted as usize;
        } else {
            stats.discrete_moves += 1;
            stats.discrete_accepted += accepted as usize;
        }
        if t < cfg.burn_in {
            if accepted {
                precond.update(&state.eval.grad_u);
            }
            if continuous && tune {
                window_moves += 1;
                window_accepted += accepted as usize;
                if window_moves == cfg.tune_window {
                    let rate = window_accepted as f64 / window_moves as f64;
                    if rate < 0.4 {
                        tau *= 0.5;
                    } else if rate > 0.7 {
                        tau *= 2.0;
                    }
                    window_moves = 0;
                    window_accepted = 0;
                }
            }
        }
        sink(&ChainSample {
            t,
            theta_c: density.theta_c(&state.u),
            theta_d: state.d.clone(),
            nlp: state.eval.nlp + density.log_jacobian(&state.u),
            accepted,
        })?;
    }
    stats.tau = tau;
    stats.preconditioner = precond.scale();
    Ok(stats)
}

/// Run the sampler and keep every sample in memory.
pub fn sample_posterior<D: Density + ?Sized>(cfg: &SamplerConfig, density: &D, u0: &[f64], d0: &[usize]) -> Result<Chain> {
    let mut samples = Vec::with_capacity(cfg.samples);
    let stats = run_chain(cfg, density, u0, d0, |s| {
        samples.push(s.clone());
        Ok(())
    })?;
    Ok(Chain { samples, stats })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapConfig {
    pub iterations: usize,
    /// Initial step in preconditioned units.
    pub step: f64,
    pub decay: f64,
    pub epsilon: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self { iterations: 300, step: 0.05, decay: 0.99, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub u: Vec<f64>,
    pub theta_c: Vec<f64>,
    pub theta_d: Vec<usize>,
    /// Best unconstrained-space nlp.
    pub nlp: f64,
    /// Best-so-far nlp after each iteration, starting with the initial value.
    pub trace: Vec<f64>,
    pub diverged: bool,
}

/// Iterations above ten times the initial nlp that count as divergence.
const DIVERGENCE_PATIENCE: usize = 100;

/// Preconditioned gradient descent in unconstrained space with discrete
/// choices held fixed. Steps that raise the nlp are reverted and halve the
/// step; successful steps grow it by 10%.
pub fn map_estimate<D: Density + ?Sized>(cfg: &MapConfig, density: &D, u0: &[f64], d: &[usize]) -> Result<MapResult> {
    if !(cfg.step > 0.0) || !(cfg.decay > 0.0 && cfg.decay < 1.0) {
        return Err(Error::Invalid("MAP step must be positive and decay in (0, 1)".into()));
    }
    let init = density.evaluate(u0, d)?;
    if !init.nlp.is_finite() {
        return Err(Error::Invalid("initial state has non-finite posterior".into()));
    }
    let mut precond = Preconditioner::from_gradient(&init.grad_u, cfg.decay, cfg.epsilon);
    let mut u = u0.to_vec();
    let mut current = init.clone();
    let mut step = cfg.step;
    let mut trace = vec![current.nlp];
    let mut above = 0usize;
    let mut diverged = false;
    for _ in 0..cfg.iterations {
        precond.update(&current.grad_u);
        let m = precond.scale();
        let trial: Vec<f64> = u.iter().zip(&current.grad_u).zip(&m).map(|((x, g), s)| x - step * s * g).collect();
        let eval = match density.evaluate(&trial, d) {
            Ok(e) if e.nlp.is_finite() => Some(e),
            Ok(_) | Err(Error::NonFiniteEvaluation { .. }) => None,
            Err(e) => return Err(e),
        };
        let trial_nlp = eval.as_ref().map_or(f64::INFINITY, |e| e.nlp);
        if init.nlp > 0.0 && trial_nlp > 10.0 * init.nlp {
            above += 1;
            if above >= DIVERGENCE_PATIENCE {
                log::warn!("MAP estimate diverged after {} iterations; returning best point", trace.len() - 1);
                diverged = true;
                break;
            }
        } else {
            above = 0;
        }
        match eval {
            Some(e) if e.nlp <= current.nlp => {
                u = trial;
                current = e;
                step *= 1.1;
            }
            _ => step *= 0.5,
        }
        trace.push(current.nlp);
    }
    Ok(MapResult { theta_c: density.theta_c(&u), u, theta_d: d.to_vec(), nlp: current.nlp, trace, diverged })
}
