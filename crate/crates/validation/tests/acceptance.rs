//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero when any fails. Set `MATINFER_ACCEPTANCE=1,5` to run a
//! subset.

use std::f64::consts::{FRAC_1_PI, TAU};
use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use matinfer::config::RunConfig;
use matinfer::run::{self, render_image};
use matinfer_core::diff::{dft_naive, Conv2dLayer, Tape};
use matinfer_core::materials::{ModelKind, ModelSpec, ParamVector, RandomInputs};
use matinfer_core::posterior::{to_unconstrained, Density, ErrorSettings, Evaluation, Posterior};
use matinfer_core::render::{ggx_d, CameraRig};
use matinfer_core::sampler::{run_chain, sample_posterior, SamplerConfig};
use matinfer_core::summary::{BinLayout, FeatureNet, Summary, SummaryOp};
use matinfer_core::{Grid, Result, Shape};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(elapsed: Duration, minutes: f64) -> bool {
    elapsed.as_secs_f64() < minutes * 60.0
}

fn posterior_for(spec: &ModelSpec, summary: Summary, n: usize, z_seed: u64, target: &ParamVector, settings: &ErrorSettings) -> Posterior {
    let rig = CameraRig::with_resolution(n);
    let z = Arc::new(RandomInputs::generate(z_seed, n).unwrap());
    let img = render_image(spec, &z, &rig, target).unwrap();
    Posterior::for_image(spec.clone(), z, rig, summary, &img, settings).unwrap()
}

/// Norm-relative error between the analytic gradient and central
/// differences with step `h`.
fn fd_error(post: &Posterior, u: &[f64], theta_d: &[usize], grad: &[f64], h: f64) -> f64 {
    let f = |x: &[f64]| post.evaluate(x, theta_d).unwrap().nlp;
    let fd: Vec<f64> = (0..u.len())
        .map(|i| {
            let (mut up, mut dn) = (u.to_vec(), u.to_vec());
            up[i] += h;
            dn[i] -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        })
        .collect();
    let diff = fd.iter().zip(grad).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    diff / fd.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12)
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    // (model, worst error at h = 1e-4, worst error at h = 1e-6 for draws over tolerance)
    let results: Vec<(ModelKind, f64, Option<f64>)> = std::thread::scope(|s| {
        let handles: Vec<_> = ModelKind::ALL
            .iter()
            .enumerate()
            .map(|(m, &kind)| {
                s.spawn(move || {
                    let spec = kind.spec();
                    let mut rng = ChaCha8Rng::seed_from_u64(100 + m as u64);
                    let target = spec.sample_prior(&mut rng);
                    let post = posterior_for(&spec, Summary::default_for(kind), 64, 200 + m as u64, &target, &ErrorSettings::default());
                    let (mut worst, mut fine) = (0.0f64, None::<f64>);
                    for _ in 0..10 {
                        let theta = spec.sample_prior(&mut rng);
                        let u = to_unconstrained(&theta.theta_c, &spec).unwrap();
                        let grad = post.evaluate(&u, &theta.theta_d).unwrap().grad_u;
                        let err = fd_error(&post, &u, &theta.theta_d, &grad, 1e-4);
                        if err >= 1e-3 {
                            let e = fd_error(&post, &u, &theta.theta_d, &grad, 1e-6);
                            fine = Some(fine.unwrap_or(0.0).max(e));
                        }
                        worst = worst.max(err);
                    }
                    (kind, worst, fine)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let elapsed = start.elapsed();
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let detail = results.iter().map(|(k, e, _)| format!("{k} {e:.1e}")).collect::<Vec<_>>().join(", ");
    let fine: Vec<String> = results.iter().filter_map(|(k, _, f)| f.map(|f| format!("{k} {f:.1e}"))).collect();
    let fine = match fine.is_empty() {
        true => String::new(),
        false => format!("; same draws at h=1e-6 (not graded): {}", fine.join(", ")),
    };
    outcome(
        worst < 1e-3 && within(elapsed, 5.0),
        format!("max relative error {worst:.2e} at h=1e-4 [{detail}] in {:.0}s{fine}", elapsed.as_secs_f64()),
    )
}

fn random_grid(rng: &mut ChaCha8Rng, shape: Shape) -> Grid {
    Grid::from_fn(shape, |_, _, _| rng.random_range(-1.0..1.0))
}

fn transform_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = [0.0f64; 3];
    for (h, w) in [(8, 8), (16, 64), (64, 64)] {
        let g = random_grid(&mut rng, Shape::new(h, w, 2));
        let tape = Tape::new();
        let fast = tape.input(g.clone()).fft2().unwrap().value();
        let input: Vec<Complex64> = g.data().chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
        for ky in 0..h {
            for kx in 0..w {
                let mut acc = Complex64::new(0.0, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        let phase = -TAU * ((ky * y) as f64 / h as f64 + (kx * x) as f64 / w as f64);
                        acc += input[y * w + x] * Complex64::from_polar(1.0, phase);
                    }
                }
                let got = Complex64::new(fast.get(ky, kx, 0), fast.get(ky, kx, 1));
                worst[0] = worst[0].max((got - acc).norm());
            }
        }
    }
    for w in [4, 32, 64] {
        let rows = random_grid(&mut rng, Shape::new(6, w, 1));
        let tape = Tape::new();
        let fast = tape.input(rows.clone()).fft1_batch().unwrap().value();
        for r in 0..6 {
            let input: Vec<Complex64> = (0..w).map(|x| Complex64::new(rows.get(r, x, 0), 0.0)).collect();
            for (k, s) in dft_naive(&input, false).iter().enumerate() {
                worst[1] = worst[1].max((Complex64::new(fast.get(r, k, 0), fast.get(r, k, 1)) - s).norm());
            }
        }
    }
    for (shape, out, k, stride, pad) in [(Shape::new(7, 9, 3), 4, 3, 1, 1), (Shape::new(33, 20, 2), 3, 5, 2, 2), (Shape::new(64, 64, 3), 8, 3, 1, 1)] {
        let x = random_grid(&mut rng, shape);
        let weights = (0..out * shape.channels * k * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bias = (0..out).map(|_| rng.random_range(-0.5..0.5)).collect();
        let layer = Arc::new(Conv2dLayer::new(out, shape.channels, k, weights, bias).unwrap());
        let tape = Tape::new();
        let fast = tape.input(x.clone()).conv2d(&layer, stride, pad).unwrap().value();
        let fs = fast.shape();
        for oy in 0..fs.height {
            for ox in 0..fs.width {
                for o in 0..out {
                    let mut acc = layer.bias[o];
                    for i in 0..shape.channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < shape.height && (ix as usize) < shape.width {
                                    acc += layer.weight(o, i, ky, kx) * x.get(iy as usize, ix as usize, i);
                                }
                            }
                        }
                    }
                    worst[2] = worst[2].max((fast.get(oy, ox, o) - acc).abs());
                }
            }
        }
    }
    let max = worst.iter().copied().fold(0.0, f64::max);
    outcome(max < 1e-6, format!("max abs error fft2 {:.1e}, fft1_batch {:.1e}, conv2d {:.1e}", worst[0], worst[1], worst[2]))
}

fn ggx_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 1_000_000;
    let mut integrals = Vec::new();
    for alpha in [0.1, 0.5, 1.0] {
        // n·h = 1 - v⁴ concentrates samples near the peak
        let mut acc = 0.0;
        for i in 0..n {
            let v = (i as f64 + rng.random::<f64>()) / n as f64;
            let mu = 1.0 - v.powi(4);
            acc += ggx_d(mu, alpha) * mu * 4.0 * v.powi(3);
        }
        integrals.push(TAU * acc / n as f64);
    }
    let peak = (ggx_d(1.0, 1.0) - FRAC_1_PI).abs();
    let pass = integrals.iter().all(|v| (v - 1.0).abs() < 0.01) && peak < 1e-12;
    outcome(pass, format!("integrals {integrals:.4?} at alpha 0.1/0.5/1.0, |D(1,1) - 1/pi| = {peak:.1e}"))
}

struct Gaussian2 {
    mu: [f64; 2],
    p: [[f64; 2]; 2],
}

impl Density for Gaussian2 {
    fn dim_c(&self) -> usize {
        2
    }
    fn cardinalities(&self) -> Vec<usize> {
        Vec::new()
    }
    fn evaluate(&self, u: &[f64], _: &[usize]) -> Result<Evaluation> {
        let d = [u[0] - self.mu[0], u[1] - self.mu[1]];
        let g = vec![self.p[0][0] * d[0] + self.p[0][1] * d[1], self.p[1][0] * d[0] + self.p[1][1] * d[1]];
        Ok(Evaluation { nlp: 0.5 * (d[0] * g[0] + d[1] * g[1]), grad_u: g })
    }
}

/// `p(d, u) ∝ w_d N(u; m_d, s_d)` over three discrete states.
struct MixedToy {
    w: [f64; 3],
    m: [f64; 3],
    s: [f64; 3],
}

impl Density for MixedToy {
    fn dim_c(&self) -> usize {
        1
    }
    fn cardinalities(&self) -> Vec<usize> {
        vec![3]
    }
    fn evaluate(&self, u: &[f64], d: &[usize]) -> Result<Evaluation> {
        let k = d[0];
        let z = (u[0] - self.m[k]) / self.s[k];
        Ok(Evaluation { nlp: 0.5 * z * z + self.s[k].ln() - self.w[k].ln(), grad_u: vec![z / self.s[k]] })
    }
}

struct Energies([f64; 3]);

impl Density for Energies {
    fn dim_c(&self) -> usize {
        0
    }
    fn cardinalities(&self) -> Vec<usize> {
        vec![3]
    }
    fn evaluate(&self, _: &[f64], d: &[usize]) -> Result<Evaluation> {
        Ok(Evaluation { nlp: self.0[d[0]], grad_u: Vec::new() })
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn sampler_correctness() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;

    // (a) correlated Gaussian
    let cov = [[1.0, 0.6], [0.6, 0.5]];
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    let target = Gaussian2 { mu: [1.0, -2.0], p: [[cov[1][1] / det, -cov[0][1] / det], [-cov[1][0] / det, cov[0][0] / det]] };
    let cfg = SamplerConfig { samples: 51_000, burn_in: 1000, seed: 41, ..SamplerConfig::default() };
    let chain = sample_posterior(&cfg, &target, &[0.0, 0.0], &[]).unwrap();
    let post = chain.post_burn_in();
    let n = post.len() as f64;
    let mean: Vec<f64> = (0..2).map(|i| post.iter().map(|s| s.theta_c[i]).sum::<f64>() / n).collect();
    let mean_err = (mean[0] - 1.0).abs().max((mean[1] + 2.0).abs());
    let mut cov_err = 0.0f64;
    for i in 0..2 {
        for j in 0..2 {
            let c = post.iter().map(|s| (s.theta_c[i] - mean[i]) * (s.theta_c[j] - mean[j])).sum::<f64>() / n;
            cov_err = cov_err.max((c - cov[i][j]).abs() / cov[i][j].abs());
        }
    }
    pass &= mean_err < 0.05 && cov_err < 0.1;
    notes.push(format!("(a) mean err {mean_err:.3}, cov rel err {cov_err:.3}"));

    // (b) mixed discrete/continuous toy against its exact cell masses
    let toy = MixedToy { w: [0.2, 0.5, 0.3], m: [-1.5, 0.0, 2.0], s: [0.5, 1.0, 0.7] };
    let edges: Vec<f64> = (0..=8).map(|i| -3.0 + 0.75 * i as f64).collect();
    let cell = |u: f64| edges.iter().filter(|&&e| u >= e).count();
    let cells = edges.len() + 1;
    let mut exact = vec![0.0; 3 * cells];
    for d in 0..3 {
        let cdf = |x: f64| normal_cdf((x - toy.m[d]) / toy.s[d]);
        let mut prev = 0.0;
        for (c, &e) in edges.iter().enumerate() {
            exact[d * cells + c] = toy.w[d] * (cdf(e) - prev);
            prev = cdf(e);
        }
        exact[d * cells + edges.len()] = toy.w[d] * (1.0 - prev);
    }
    let steps = 100_000;
    let cfg = SamplerConfig { samples: steps, burn_in: 1000, alpha: Some(0.5), seed: 42, ..SamplerConfig::default() };
    let mut counts = vec![0usize; 3 * cells];
    let mut kept = 0;
    run_chain(&cfg, &toy, &[0.0], &[1], |s| {
        if s.t >= cfg.burn_in {
            counts[s.theta_d[0] * cells + cell(s.theta_c[0])] += 1;
            kept += 1;
        }
        Ok(())
    })
    .unwrap();
    let tv = 0.5 * counts.iter().zip(&exact).map(|(&c, p)| (c as f64 / kept as f64 - p).abs()).sum::<f64>();
    pass &= tv < 0.03;
    notes.push(format!("(b) TV {tv:.4} over {} cells", 3 * cells));

    // (c) detailed balance on three states
    let cfg = SamplerConfig { samples: 1_000_000, burn_in: 0, alpha: Some(0.0), seed: 43, ..SamplerConfig::default() };
    let mut flux = [[0usize; 3]; 3];
    let mut prev = 0;
    run_chain(&cfg, &Energies([0.0, 0.7, 1.6]), &[], &[0], |s| {
        flux[prev][s.theta_d[0]] += 1;
        prev = s.theta_d[0];
        Ok(())
    })
    .unwrap();
    let mut asym = 0.0f64;
    for a in 0..3 {
        for b in a + 1..3 {
            let (ab, ba) = (flux[a][b] as f64, flux[b][a] as f64);
            asym = asym.max((ab - ba).abs() / ((ab + ba) / 2.0));
        }
    }
    pass &= asym < 0.03;
    notes.push(format!("(c) max flux asymmetry {asym:.4}"));
    outcome(pass, notes.join("; "))
}

fn similarity_ridge() -> Outcome {
    let start = Instant::now();
    let spec = ModelKind::TranslucentDemo.spec();
    let target = ParamVector { theta_c: vec![3.0, 0.3], theta_d: vec![] };
    let post = posterior_for(&spec, Summary::default_for(ModelKind::TranslucentDemo), 64, 51, &target, &ErrorSettings::default());
    let cfg = SamplerConfig { samples: 30_000, burn_in: 5_000, seed: 52, ..SamplerConfig::default() };
    let u0 = to_unconstrained(&target.theta_c, &spec).unwrap();
    let chain = sample_posterior(&cfg, &post, &u0, &[]).unwrap();
    let post_samples = chain.post_burn_in();
    let reduced: Vec<f64> = post_samples.iter().map(|s| (1.0 - s.theta_c[1]) * s.theta_c[0]).collect();
    let n = reduced.len() as f64;
    let mean = reduced.iter().sum::<f64>() / n;
    let cv = (reduced.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt() / mean;
    let lo = post_samples.iter().map(|s| s.theta_c[0]).fold(f64::INFINITY, f64::min);
    let hi = post_samples.iter().map(|s| s.theta_c[0]).fold(0.0, f64::max);
    let elapsed = start.elapsed();
    outcome(
        cv < 0.1 && hi / lo >= 2.0 && within(elapsed, 10.0),
        format!(
            "(1-g) sigma_s CV {cv:.3} (mean {mean:.3}), sigma_s spans {lo:.2}..{hi:.2} ({:.1}x), acceptance {:.2}, {:.0}s",
            hi / lo,
            chain.stats.acceptance_rate(),
            elapsed.as_secs_f64()
        ),
    )
}

fn parameter_counts() -> Outcome {
    let expect = [
        (ModelKind::Bump, 8),
        (ModelKind::Leather, 12),
        (ModelKind::Plaster, 11),
        (ModelKind::Flakes, 13),
        (ModelKind::BrushedMetal, 10),
        (ModelKind::Wood, 23),
    ];
    let mut pass = true;
    let mut got = Vec::new();
    for (kind, n) in expect {
        let spec = ModelSpec::from_manifest(&kind.spec().manifest_json()).unwrap();
        pass &= spec.continuous.len() == n;
        got.push(format!("{kind} {}", spec.continuous.len()));
    }
    outcome(pass, got.join(", "))
}

/// MAP-then-sample on a synthetic target through the command pipeline.
fn recover(dir: &std::path::Path, kind: ModelKind, values: &[(&str, f64)], checked: &[&str]) -> (bool, String) {
    let start = Instant::now();
    let mut cfg = RunConfig::new(kind);
    cfg.out = dir.join(kind.name());
    cfg.seed = 61;
    cfg.sampler.seed = 62;
    let mut synth = matinfer::config::SynthSpec::default();
    for (name, v) in values {
        synth.values.insert(name.to_string(), *v);
    }
    cfg.target.synth = Some(synth);
    let truth = run::synth(&cfg).unwrap().theta;
    let setup = run::Setup::new(&cfg).unwrap();
    let post = setup.posterior(&setup.load_target().unwrap()).unwrap();
    let prior_mode = post.terms(&setup.spec.prior_mean()).unwrap().data;

    let out = run::sample(&cfg).unwrap();
    let samples = matinfer::chain::read_chain(&out.chain_path).unwrap();
    let best = samples[cfg.sampler.burn_in..].iter().min_by(|a, b| a.nlp.total_cmp(&b.nlp)).unwrap();
    let best_theta = ParamVector { theta_c: best.theta_c.clone(), theta_d: best.theta_d.clone() };
    let data = post.terms(&best_theta).unwrap().data;
    let ratio = data / prior_mode;
    let mut worst = 0.0f64;
    let mut errs = Vec::new();
    for name in checked {
        let i = setup.spec.index_of(name).unwrap();
        let rel = (best.theta_c[i] - truth.theta_c[i]).abs() / truth.theta_c[i].abs();
        worst = worst.max(rel);
        errs.push(format!("{name} {:.3}/{:.3}", best.theta_c[i], truth.theta_c[i]));
    }
    let elapsed = start.elapsed();
    let pass = ratio < 0.01 && worst < 0.1 && within(elapsed, 15.0);
    (
        pass,
        format!(
            "{kind}: data term {:.2e} of prior mode, max param error {:.1}% [{}], {:.0}s",
            ratio,
            100.0 * worst,
            errs.join(", "),
            elapsed.as_secs_f64()
        ),
    )
}

fn synthetic_recovery() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let bump = recover(
        dir.path(),
        ModelKind::Bump,
        &[
            ("albedo_r", 0.6),
            ("albedo_g", 0.45),
            ("albedo_b", 0.3),
            ("roughness", 0.28),
            ("sigma_f", 8.0),
            ("height_amp", 0.004),
            ("light_intensity", 3.5),
            ("vignette_sigma", 1.2),
        ],
        &["roughness", "albedo_r", "albedo_g", "albedo_b"],
    );
    let metal = recover(
        dir.path(),
        ModelKind::BrushedMetal,
        &[
            ("f0_r", 0.9),
            ("f0_g", 0.75),
            ("f0_b", 0.6),
            ("roughness_x", 0.2),
            ("roughness_y", 0.45),
            ("sigma_fx", 3.0),
            ("sigma_fy", 9.0),
            ("height_amp", 0.0015),
        ],
        &["roughness_x", "roughness_y", "f0_r", "f0_g", "f0_b"],
    );
    outcome(bump.0 && metal.0, format!("{}; {}", bump.1, metal.1))
}

/// Summary distance normalized by the error model built at the reference.
fn normalized_distance(summary: &Summary, reference: &Grid, other: &Grid) -> f64 {
    let a = summary.evaluate(reference).unwrap();
    let b = summary.evaluate(other).unwrap();
    let err = ErrorSettings::default().build(&a).unwrap();
    (2.0 * err.data_term(&a.values, &b.values)).sqrt()
}

fn summary_discrimination() -> Outcome {
    let n = 128;
    let rig = CameraRig::with_resolution(n);
    let bins_fft = Summary::new(vec![(SummaryOp::Bins { layout: BinLayout::Concentric, k: 16 }, 1.0), (SummaryOp::FftBins { k: 16 }, 1.0)]).unwrap();
    let gram = Summary::single(SummaryOp::Gram(Arc::new(FeatureNet::random_default())));
    let mut worst = [1.0f64; 2];
    let mut notes = Vec::new();
    for (m, kind) in ModelKind::ALL.into_iter().enumerate() {
        let spec = kind.spec();
        let mut rng = ChaCha8Rng::seed_from_u64(800 + m as u64);
        let mut wins = [0usize; 2];
        for trial in 0..20u64 {
            let z1 = RandomInputs::generate(1000 * m as u64 + 2 * trial, n).unwrap();
            let z2 = RandomInputs::generate(1000 * m as u64 + 2 * trial + 1, n).unwrap();
            let a = spec.sample_prior(&mut rng);
            let b = spec.sample_prior(&mut rng);
            let reference = render_image(&spec, &z1, &rig, &a).unwrap();
            let same = render_image(&spec, &z2, &rig, &a).unwrap();
            let different = render_image(&spec, &z2, &rig, &b).unwrap();
            for (i, summary) in [&bins_fft, &gram].into_iter().enumerate() {
                if normalized_distance(summary, &reference, &same) < normalized_distance(summary, &reference, &different) {
                    wins[i] += 1;
                }
            }
        }
        for i in 0..2 {
            worst[i] = worst[i].min(wins[i] as f64 / 20.0);
        }
        notes.push(format!("{kind} {}/{}", wins[0], wins[1]));
    }
    outcome(
        worst.iter().all(|&w| w >= 0.95),
        format!("wins out of 20 (bins+fft/gram): {}", notes.join(", ")),
    )
}

fn throughput() -> Outcome {
    let start = Instant::now();
    let kind = ModelKind::Bump;
    let spec = kind.spec();
    let summary = Summary::new(vec![(SummaryOp::Bins { layout: BinLayout::Concentric, k: 16 }, 1.0)]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let target = spec.sample_prior(&mut rng);
    let post = posterior_for(&spec, summary, 64, 91, &target, &ErrorSettings::default());
    let cfg = SamplerConfig { samples: 1000, burn_in: 200, seed: 92, ..SamplerConfig::default() };
    let u0 = to_unconstrained(&spec.prior_mean().theta_c, &spec).unwrap();
    let chain = sample_posterior(&cfg, &post, &u0, &[]).unwrap();
    let elapsed = start.elapsed();
    outcome(
        chain.samples.len() == 1000 && within(elapsed, 5.0),
        format!("1000 bump iterations at 64x64 in {:.1}s", elapsed.as_secs_f64()),
    )
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::new(ModelKind::Leather);
    cfg.out = dir.path().join("run");
    cfg.resolution = 32;
    cfg.seed = 101;
    cfg.sampler.seed = 102;
    cfg.sampler.samples = 200;
    cfg.sampler.burn_in = 50;
    cfg.map.iterations = 20;
    cfg.target.synth = Some(Default::default());
    run::synth(&cfg).unwrap();
    let first = run::sample(&cfg).unwrap();
    let a = std::fs::read(&first.chain_path).unwrap();
    let second = run::sample(&cfg).unwrap();
    let b = std::fs::read(&second.chain_path).unwrap();
    let identical = a == b;

    let records = matinfer::chain::read_chain(&first.chain_path).unwrap().len();
    let mut survives = true;
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let last_line = a[..a.len() - 1].iter().rposition(|&c| c == b'\n').unwrap() + 1;
    for _ in 0..20 {
        let cut = rng.random_range(last_line..a.len());
        let path = dir.path().join("cut.jsonl");
        std::fs::write(&path, &a[..cut]).unwrap();
        survives &= matches!(matinfer::chain::read_chain(&path), Ok(v) if v.len() == records - 1);
    }
    outcome(
        identical && survives && records == cfg.sampler.samples,
        format!("chain files identical: {identical}; truncated final line read with one fewer record: {survives}"),
    )
}

fn main() {
    let criteria: [(usize, &str, fn() -> Outcome); 10] = [
        (1, "gradient suite", gradient_suite),
        (2, "fft/conv oracles", transform_oracles),
        (3, "ggx normalization", ggx_normalization),
        (4, "sampler correctness", sampler_correctness),
        (5, "similarity ridge", similarity_ridge),
        (6, "parameter counts", parameter_counts),
        (7, "synthetic recovery", synthetic_recovery),
        (8, "summary discrimination", summary_discrimination),
        (9, "throughput", throughput),
        (10, "reproducibility", reproducibility),
    ];
    let only: Option<Vec<usize>> =
        std::env::var("MATINFER_ACCEPTANCE").ok().map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failed = 0;
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let result = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        if !result.pass {
            failed += 1;
        }
        let line = format!("criterion {id:>2} {name}: {} - {}\n", if result.pass { "PASS" } else { "FAIL" }, result.detail);
        std::io::stdout().write_all(line.as_bytes()).unwrap();
        std::io::stdout().flush().unwrap();
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
