//! Differentiable rendering of material maps under a collocated point light
//! and pinhole camera above a fronto-parallel planar sample.
//!
//! With light and camera at the same point the incoming, outgoing and half
//! vectors coincide, so every microfacet lobe reduces to
//! `D(ω)·G(ω)·F0 / (4 (n·ω)²)` and the Fresnel term is its normal-incidence
//! value. Radiance factors include the cosine `n·ω`.

use std::f64::consts::{FRAC_1_PI, PI};

use serde::{Deserialize, Serialize};

use crate::diff::{Tape, Var};
use crate::error::{Error, Result};
use crate::grid::{Grid, Shape};
use crate::materials::{Lobe, MaterialMaps};

/// Lower bound on `n·ω` to keep grazing pixels finite.
const MIN_COSINE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    /// Full horizontal field of view, radians.
    pub field_of_view: f64,
    /// Height of the camera and light above the sample center.
    pub distance: f64,
    /// Square image size in pixels.
    pub resolution: usize,
}

impl CameraRig {
    pub const DEFAULT_FOV: f64 = 0.698_131_700_797_731_8; // 40 degrees

    pub fn new(field_of_view: f64, distance: f64, resolution: usize) -> Result<Self> {
        if !(field_of_view > 0.0 && field_of_view < PI) {
            return Err(Error::Invalid(format!("field of view {field_of_view} outside (0, pi)")));
        }
        if !(distance > 0.0) || resolution == 0 {
            return Err(Error::Invalid("distance and resolution must be positive".into()));
        }
        Ok(Self { field_of_view, distance, resolution })
    }

    /// 40 degree field of view at unit distance.
    pub fn with_resolution(resolution: usize) -> Self {
        Self { field_of_view: Self::DEFAULT_FOV, distance: 1.0, resolution }
    }

    /// Physical width of the imaged patch.
    pub fn sample_width(&self) -> f64 {
        2.0 * self.distance * (0.5 * self.field_of_view).tan()
    }

    pub fn texel_size(&self) -> f64 {
        self.sample_width() / self.resolution as f64
    }

    /// Position of pixel centers on the sample plane, `(x, y)` grids.
    pub fn plane_coordinates(&self) -> (Grid, Grid) {
        let n = self.resolution;
        let t = self.texel_size();
        let coord = |i: usize| (i as f64 + 0.5 - n as f64 / 2.0) * t;
        let shape = Shape::new(n, n, 1);
        (Grid::from_fn(shape, |_, x, _| coord(x)), Grid::from_fn(shape, |y, _, _| coord(y)))
    }

    /// Unit vectors from each pixel's surface point toward the camera.
    pub fn view_directions(&self) -> Grid {
        let (xs, ys) = self.plane_coordinates();
        let d = self.distance;
        Grid::from_fn(Shape::new(self.resolution, self.resolution, 3), |y, x, c| {
            let (px, py) = (xs.get(y, x, 0), ys.get(y, x, 0));
            let r = (px * px + py * py + d * d).sqrt();
            [-px, -py, d][c] / r
        })
    }

    /// Inverse-square falloff `1/r²` per pixel.
    pub fn falloff(&self) -> Grid {
        let (xs, ys) = self.plane_coordinates();
        let d2 = self.distance * self.distance;
        Grid::from_fn(xs.shape(), |y, x, _| 1.0 / (xs.get(y, x, 0).powi(2) + ys.get(y, x, 0).powi(2) + d2))
    }

    /// Squared distance from the image center with the image spanning `[-1, 1]`.
    pub fn vignette_radius_sq(&self) -> Grid {
        let n = self.resolution as f64;
        let c = |i: usize| (i as f64 + 0.5) / n * 2.0 - 1.0;
        Grid::from_fn(Shape::new(self.resolution, self.resolution, 1), |y, x, _| c(x).powi(2) + c(y).powi(2))
    }
}

/// Isotropic GGX normal distribution.
pub fn ggx_d(n_dot_h: f64, alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    let t = n_dot_h * n_dot_h * (a2 - 1.0) + 1.0;
    a2 / (PI * t * t)
}

/// Elliptical GGX for a half vector `h` given in the tangent frame.
pub fn ggx_d_aniso(h: [f64; 3], alpha_x: f64, alpha_y: f64) -> f64 {
    let t = h[0] * h[0] / (alpha_x * alpha_x) + h[1] * h[1] / (alpha_y * alpha_y) + h[2] * h[2];
    1.0 / (PI * alpha_x * alpha_y * t * t)
}

/// Tangent and bitangent obtained by the minimal rotation taking `+z` to `n`.
/// Swapping the x and y components of `n` swaps the returned pair, which keeps
/// anisotropic shading symmetric under transposition.
pub fn tangent_frame(n: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let q = 1.0 / (1.0 + n[2]);
    (
        [1.0 - n[0] * n[0] * q, -n[0] * n[1] * q, -n[0]],
        [-n[0] * n[1] * q, 1.0 - n[1] * n[1] * q, -n[1]],
    )
}

/// `D·G·F0 / (4 n·ω)` of one lobe, with `ω` the collocated view direction.
fn lobe_radiance<'t>(lobe: &Lobe<'t>, normal: Var<'t>, omega: Var<'t>) -> Var<'t> {
    let c = normal.dot3(omega).max_scalar(MIN_COSINE);
    let r = lobe.roughness;
    let dg = if r.shape().channels == 1 {
        let a2 = r.square().square();
        let c2 = c.square();
        let t = c2 * (a2 - 1.0) + 1.0;
        let d = a2 / (t.square() * PI);
        // Smith height-correlated masking with l = v
        let g = ((1.0 - c2) * a2 / c2 + 1.0).sqrt().recip();
        d * g
    } else {
        let (nx, ny, nz) = (normal.channel(0), normal.channel(1), normal.channel(2));
        let q = (nz + 1.0).recip();
        let (ox, oy, oz) = (omega.channel(0), omega.channel(1), omega.channel(2));
        let nxy = nx * ny * q;
        let hx = (1.0 - nx.square() * q) * ox - nxy * oy - nx * oz;
        let hy = -(nxy * ox) + (1.0 - ny.square() * q) * oy - ny * oz;
        let ax = r.channel(0).square();
        let ay = r.channel(1).square();
        let (hx2, hy2, hz2) = (hx.square(), hy.square(), c.square());
        let t = hx2 / ax.square() + hy2 / ay.square() + hz2;
        let d = (ax * ay * t.square() * PI).recip();
        let g = ((hx2 * ax.square() + hy2 * ay.square()) / hz2 + 1.0).sqrt().recip();
        d * g
    };
    let spec = dg * lobe.f0 / (c * 4.0);
    match lobe.weight {
        Some(w) => spec * w,
        None => spec,
    }
}

/// Radiance factor per pixel (BRDF times cosine) for view directions `omega`.
pub fn eval_collocated<'t>(maps: &MaterialMaps<'t>, omega: Var<'t>) -> Var<'t> {
    let tape = omega.tape();
    let shape = omega.shape();
    let mut total = tape.constant(Grid::zeros(Shape::new(shape.height, shape.width, 3)));
    if let Some(albedo) = maps.albedo {
        let c = maps.normal.dot3(omega).max_scalar(MIN_COSINE);
        total = total + albedo * c * FRAC_1_PI;
    }
    for lobe in &maps.lobes {
        let normal = lobe.normal.unwrap_or(maps.normal);
        total = total + lobe_radiance(lobe, normal, omega);
    }
    total
}

/// Render linear RGB radiance.
pub fn render_collocated<'t>(maps: &MaterialMaps<'t>, rig: &CameraRig) -> Var<'t> {
    let tape: &'t Tape = maps.light_intensity.tape();
    let omega = tape.constant(rig.view_directions());
    let falloff = tape.constant(rig.falloff());
    let d2 = tape.constant(rig.vignette_radius_sq());
    let vignette = (d2 * maps.vignette_sigma.square().recip() * -0.5).exp();
    eval_collocated(maps, omega) * (falloff * vignette * maps.light_intensity)
}
