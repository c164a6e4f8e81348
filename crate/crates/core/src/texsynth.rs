//! Procedural texture building blocks.
//!
//! Everything that depends on the fixed random input is generated once as a
//! plain [`Grid`]; the differentiable functions here take those grids as
//! constants and the continuous parameters as [`Var`]s. All textures tile
//! seamlessly: distances and lattices wrap around the unit torus.

use std::f64::consts::TAU;
use std::sync::Arc;

use rand::Rng;

use crate::diff::{Tape, Var};
use crate::error::{Error, Result};
use crate::grid::{Grid, Shape};

/// Number of noise textures and cell maps per family.
pub const BANK_SIZE: usize = 4;
/// Octaves summed by the fractal value noise.
pub const NOISE_OCTAVES: usize = 5;
/// Amplitude ratio between successive octaves.
pub const NOISE_GAIN: f64 = 0.5;
/// Lattice cells across the texture in the coarsest octave.
pub const NOISE_BASE_FREQUENCY: usize = 4;
/// Seeds per cell map at scale 1.
pub const CELL_COUNT: usize = 64;
/// Seeds of the flake cell map at scale 1.
pub const FLAKE_CELL_COUNT: usize = 2048;

/// Gaussian power spectrum parameters, in cycles per texture.
#[derive(Clone, Copy, Debug)]
pub struct SpectrumParams<'t> {
    pub sigma_fx: Var<'t>,
    pub sigma_fy: Var<'t>,
    pub amplitude: Var<'t>,
}

/// Signed frequency index of bin `i` on an axis of length `n`.
fn signed_frequency(i: usize, n: usize) -> f64 {
    if i <= n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

/// Random phases with `phase(-k) = -phase(k)` so the synthesized field is
/// real. Self-conjugate bins get phase 0. Values lie in `[0, 2π)`.
pub fn phase_grid<R: Rng>(rng: &mut R, height: usize, width: usize) -> Grid {
    let mut g = Grid::zeros(Shape::new(height, width, 1));
    for y in 0..height {
        for x in 0..width {
            let (py, px) = ((height - y) % height, (width - x) % width);
            let (i, j) = (y * width + x, py * width + px);
            if i == j {
                continue;
            }
            if i < j {
                g.data_mut()[i] = rng.random_range(0.0..TAU);
            } else {
                let mirrored = (-g.data()[j]).rem_euclid(TAU);
                g.data_mut()[i] = if mirrored >= TAU { 0.0 } else { mirrored };
            }
        }
    }
    g
}

/// Fourier synthesis of a stationary heightfield.
///
/// The Gaussian power spectrum gives per-bin amplitude `sqrt(S)`, the fixed
/// phases are attached, and the real part of the inverse transform is scaled
/// so that `amplitude` is the RMS height. The DC bin is zero.
pub fn synth_heightfield<'t>(tape: &'t Tape, spec: &SpectrumParams<'t>, phases: &Grid) -> Result<Var<'t>> {
    let s = phases.shape();
    if s.channels != 1 {
        return Err(Error::Invalid(format!("phase grid must have one channel, got {s}")));
    }
    let (h, w) = (s.height, s.width);
    let kx2 = tape.constant(Grid::from_fn(Shape::new(1, w, 1), |_, x, _| signed_frequency(x, w).powi(2)));
    let ky2 = tape.constant(Grid::from_fn(Shape::new(h, 1, 1), |y, _, _| signed_frequency(y, h).powi(2)));
    let mut dc_mask = Grid::filled(Shape::new(h, w, 1), 1.0);
    dc_mask.set(0, 0, 0, 0.0);
    let dc_mask = tape.constant(dc_mask);

    // sqrt of the power spectrum, written as exp of half the exponent
    let inv_x = spec.sigma_fx.square().recip() * -0.25;
    let inv_y = spec.sigma_fy.square().recip() * -0.25;
    let amp = (kx2 * inv_x + ky2 * inv_y).exp() * dc_mask;
    let cos = tape.constant(phases.map(f64::cos));
    let sin = tape.constant(phases.map(f64::sin));
    let complex = Var::concat_channels(&[amp * cos, amp * sin]);
    let raw = complex.ifft2()?.re();
    let norm = amp.square().sum().sqrt().recip() * (h * w) as f64;
    Ok(raw * norm * spec.amplitude)
}

/// Unit normals of a heightfield from toroidal central differences.
pub fn height_to_normals<'t>(h: Var<'t>, texel_size: f64) -> Var<'t> {
    let scale = 1.0 / (2.0 * texel_size);
    // roll(dy, dx) reads in[y - dy][x - dx]
    let dx = (h.roll(0, -1) - h.roll(0, 1)) * scale;
    let dy = (h.roll(-1, 0) - h.roll(1, 0)) * scale;
    let one = h.tape().constant(Grid::filled(h.shape(), 1.0));
    Var::concat_channels(&[-dx, -dy, one]).normalize()
}

/// Smooth threshold `sigmoid((t - level) * sharpness)`.
pub fn threshold_remap<'t>(t: Var<'t>, level: Var<'t>, sharpness: Var<'t>) -> Var<'t> {
    ((t - level) * sharpness).sigmoid()
}

fn torus_delta(a: f64, b: f64, period: f64) -> f64 {
    let d = (a - b).rem_euclid(period);
    d.min(period - d)
}

/// Points on the unit torus by dart throwing with minimum distance
/// `0.7 / sqrt(count)`. May return fewer points if the budget runs out.
pub fn blue_noise<R: Rng>(rng: &mut R, count: usize) -> Vec<[f64; 2]> {
    let min_dist = 0.7 / (count as f64).sqrt();
    let min_sq = min_dist * min_dist;
    let mut points: Vec<[f64; 2]> = Vec::with_capacity(count);
    let mut attempts = 0;
    while points.len() < count && attempts < count * 1000 {
        attempts += 1;
        let p = [rng.random::<f64>(), rng.random::<f64>()];
        let ok = points.iter().all(|q| {
            let dx = torus_delta(p[0], q[0], 1.0);
            let dy = torus_delta(p[1], q[1], 1.0);
            dx * dx + dy * dy >= min_sq
        });
        if ok {
            points.push(p);
        }
    }
    points
}

/// Cell map precomputed at a fixed resolution.
///
/// Seeds are snapped to pixel centers, so the distance map is exactly zero on
/// seed pixels. Distances are divided by the mean seed spacing.
#[derive(Clone, Debug)]
pub struct CellMap {
    pub points: Vec<[f64; 2]>,
    /// Index of the nearest seed per pixel.
    pub ids: Grid,
    /// Distance to the nearest seed.
    pub distance: Arc<Grid>,
    /// Gap between nearest and second-nearest seed distances; zero on cell borders.
    pub edge: Arc<Grid>,
}

impl CellMap {
    pub fn new(points: &[[f64; 2]], size: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Invalid("cell map needs at least one seed".into()));
        }
        let n = size as f64;
        let mut snapped: Vec<[f64; 2]> = Vec::with_capacity(points.len());
        for p in points {
            let q = [(p[0] * n).floor().rem_euclid(n) + 0.5, (p[1] * n).floor().rem_euclid(n) + 0.5];
            if !snapped.contains(&q) {
                snapped.push(q);
            }
        }
        let spacing = n / (snapped.len() as f64).sqrt();
        let shape = Shape::new(size, size, 1);
        let mut ids = Grid::zeros(shape);
        let mut distance = Grid::zeros(shape);
        let mut edge = Grid::zeros(shape);
        for y in 0..size {
            for x in 0..size {
                let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
                let (mut d1, mut d2, mut best) = (f64::INFINITY, f64::INFINITY, 0);
                for (i, q) in snapped.iter().enumerate() {
                    let dx = torus_delta(cx, q[0], n);
                    let dy = torus_delta(cy, q[1], n);
                    let d = (dx * dx + dy * dy).sqrt();
                    if d < d1 {
                        d2 = d1;
                        d1 = d;
                        best = i;
                    } else if d < d2 {
                        d2 = d;
                    }
                }
                if snapped.len() == 1 {
                    d2 = d1;
                }
                ids.set(y, x, 0, best as f64);
                distance.set(y, x, 0, d1 / spacing);
                edge.set(y, x, 0, (d2 - d1) / spacing);
            }
        }
        let points = snapped.iter().map(|q| [q[0] / n, q[1] / n]).collect();
        Ok(Self { points, ids, distance: Arc::new(distance), edge: Arc::new(edge) })
    }

    pub fn size(&self) -> usize {
        self.ids.shape().width
    }

    /// Cell ids sampled at `(x·scale, y·scale)` by nearest lookup.
    pub fn ids_at_scale(&self, scale: f64, size: usize) -> Grid {
        let n = self.size() as i64;
        Grid::from_fn(Shape::new(size, size, 1), |y, x, _| {
            let sy = ((y as f64 * scale).round() as i64).rem_euclid(n) as usize;
            let sx = ((x as f64 * scale).round() as i64).rem_euclid(n) as usize;
            self.ids.get(sy, sx, 0)
        })
    }
}

/// Cell maps resampled by a differentiable scale factor.
pub struct ScaledCells<'t> {
    pub ids: Grid,
    pub distance: Var<'t>,
    pub edge: Var<'t>,
}

/// Scale a precomputed cell map; `scale > 1` shrinks the cells.
pub fn voronoi_maps<'t>(tape: &'t Tape, cells: &CellMap, scale: Var<'t>, size: usize) -> ScaledCells<'t> {
    let out = Shape::new(size, size, 1);
    ScaledCells {
        ids: cells.ids_at_scale(scale.item(), size),
        distance: tape.resample(&cells.distance, scale, out),
        edge: tape.resample(&cells.edge, scale, out),
    }
}

fn quintic(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Tileable fractal value noise normalized to `[0, 1]`.
pub fn value_noise<R: Rng>(rng: &mut R, size: usize) -> Grid {
    let mut acc = Grid::zeros(Shape::new(size, size, 1));
    let mut amplitude = 1.0;
    for octave in 0..NOISE_OCTAVES {
        let freq = NOISE_BASE_FREQUENCY << octave;
        let lattice: Vec<f64> = (0..freq * freq).map(|_| rng.random::<f64>()).collect();
        let at = |i: usize, j: usize| lattice[(j % freq) * freq + (i % freq)];
        for y in 0..size {
            let fy = (y as f64 + 0.5) / size as f64 * freq as f64;
            let (j, ty) = (fy.floor() as usize, quintic(fy.fract()));
            for x in 0..size {
                let fx = (x as f64 + 0.5) / size as f64 * freq as f64;
                let (i, tx) = (fx.floor() as usize, quintic(fx.fract()));
                let top = at(i, j) * (1.0 - tx) + at(i + 1, j) * tx;
                let bottom = at(i, j + 1) * (1.0 - tx) + at(i + 1, j + 1) * tx;
                acc.data_mut()[y * size + x] += amplitude * (top * (1.0 - ty) + bottom * ty);
            }
        }
        amplitude *= NOISE_GAIN;
    }
    let (lo, hi) = (acc.min(), acc.max());
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    acc.map(|v| (v - lo) / span)
}

/// Pre-generated noise textures and cell maps for one texture size.
#[derive(Clone, Debug)]
pub struct NoiseBank {
    pub textures: Vec<Arc<Grid>>,
    pub cells: Vec<CellMap>,
}

impl NoiseBank {
    pub fn generate<R: Rng>(rng: &mut R, size: usize) -> Result<Self> {
        let textures = (0..BANK_SIZE).map(|_| Arc::new(value_noise(rng, size))).collect();
        let cells = (0..BANK_SIZE)
            .map(|_| CellMap::new(&blue_noise(rng, CELL_COUNT), size))
            .collect::<Result<_>>()?;
        Ok(Self { textures, cells })
    }
}

/// Radially averaged autocorrelation widths along x and y, measured as the
/// lag where the normalized circular autocorrelation first drops below 1/e.
pub fn correlation_lengths(h: &Grid) -> (f64, f64) {
    let s = h.shape();
    let mean = h.mean();
    let var: f64 = h.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    let corr = |dy: usize, dx: usize| -> f64 {
        let mut acc = 0.0;
        for y in 0..s.height {
            for x in 0..s.width {
                let a = h.get(y, x, 0) - mean;
                let b = h.get((y + dy) % s.height, (x + dx) % s.width, 0) - mean;
                acc += a * b;
            }
        }
        acc / var
    };
    let width = |along_x: bool| -> f64 {
        let n = if along_x { s.width } else { s.height };
        let mut prev = 1.0;
        for lag in 1..n / 2 {
            let c = if along_x { corr(0, lag) } else { corr(lag, 0) };
            if c < (-1.0f64).exp() {
                // linear interpolation between the bracketing lags
                return lag as f64 - 1.0 + (prev - (-1.0f64).exp()) / (prev - c);
            }
            prev = c;
        }
        n as f64 / 2.0
    };
    (width(true), width(false))
}
