//! Procedural forward models `f0(θ; z)` producing per-pixel material maps.

mod models;
mod params;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diff::{Tape, Var};
use crate::error::{Error, Result};
use crate::grid::{Grid, Shape};
use crate::render::CameraRig;
use crate::texsynth::{blue_noise, phase_grid, CellMap, NoiseBank, FLAKE_CELL_COUNT};

pub use models::{translucent_reflectance, wood_ring_phase, TRANSLUCENT_SIGMA_A};
pub use params::{ContinuousParam, DiscreteParam, ModelSpec, ParamVector, MANIFEST_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Bump,
    Leather,
    Plaster,
    BrushedMetal,
    Flakes,
    Wood,
    TranslucentDemo,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::Bump,
        ModelKind::Leather,
        ModelKind::Plaster,
        ModelKind::BrushedMetal,
        ModelKind::Flakes,
        ModelKind::Wood,
        ModelKind::TranslucentDemo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Bump => "bump",
            ModelKind::Leather => "leather",
            ModelKind::Plaster => "plaster",
            ModelKind::BrushedMetal => "brushed_metal",
            ModelKind::Flakes => "flakes",
            ModelKind::Wood => "wood",
            ModelKind::TranslucentDemo => "translucent_demo",
        }
    }

    /// Default parameter layout and priors.
    pub fn spec(self) -> ModelSpec {
        models::spec(self)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown model `{s}`")))
    }
}

/// One specular GGX lobe.
#[derive(Clone, Copy, Debug)]
pub struct Lobe<'t> {
    /// Perceptual roughness `r`; one channel for isotropic, two for `(r_x, r_y)`.
    pub roughness: Var<'t>,
    /// Reflectance at normal incidence, one or three channels.
    pub f0: Var<'t>,
    /// Blend weight; `None` means 1.
    pub weight: Option<Var<'t>>,
    /// Lobe-specific normals; `None` uses the surface normal.
    pub normal: Option<Var<'t>>,
}

/// Output of a forward model. Maps may be stored at `1×1` and broadcast.
#[derive(Clone, Debug)]
pub struct MaterialMaps<'t> {
    /// Diffuse albedo; `None` when the model has no diffuse term.
    pub albedo: Option<Var<'t>>,
    /// Unit surface normals.
    pub normal: Var<'t>,
    pub lobes: Vec<Lobe<'t>>,
    pub height: Option<Var<'t>>,
    pub light_intensity: Var<'t>,
    pub vignette_sigma: Var<'t>,
}

/// The fixed random input `z` at one texture size.
#[derive(Clone, Debug)]
pub struct RandomInputs {
    pub seed: u64,
    pub size: usize,
    /// Hermitian phase grids for Fourier synthesis.
    pub phases: Vec<Grid>,
    pub bank: NoiseBank,
    /// Standard-normal slope pairs, constant per cell of a dense flake cell map.
    pub flake_slopes: Arc<Grid>,
}

impl RandomInputs {
    pub fn generate(seed: u64, size: usize) -> Result<Self> {
        if size < 4 || !size.is_power_of_two() {
            return Err(Error::Invalid(format!("texture size {size} must be a power of two >= 4")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phases = (0..2).map(|_| phase_grid(&mut rng, size, size)).collect();
        let bank = NoiseBank::generate(&mut rng, size)?;
        let cells = CellMap::new(&blue_noise(&mut rng, FLAKE_CELL_COUNT), size)?;
        let pairs: Vec<[f64; 2]> = (0..cells.points.len())
            .map(|_| [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)])
            .collect();
        let flake_slopes = Grid::from_fn(Shape::new(size, size, 2), |y, x, c| pairs[cells.ids.get(y, x, 0) as usize][c]);
        Ok(Self { seed, size, phases, bank, flake_slopes: Arc::new(flake_slopes) })
    }

    /// The same random input mirrored across the main diagonal.
    pub fn transposed(&self) -> Self {
        let t = |g: &Grid| g.transposed();
        let mut bank = self.bank.clone();
        bank.textures = bank.textures.iter().map(|g| Arc::new(t(g))).collect();
        for cells in &mut bank.cells {
            cells.points = cells.points.iter().map(|p| [p[1], p[0]]).collect();
            cells.ids = t(&cells.ids);
            cells.distance = Arc::new(t(&cells.distance));
            cells.edge = Arc::new(t(&cells.edge));
        }
        Self {
            seed: self.seed,
            size: self.size,
            phases: self.phases.iter().map(t).collect(),
            bank,
            flake_slopes: Arc::new(self.flake_slopes.transposed()),
        }
    }
}

/// Named access to the entries of a `(1, 1, n)` parameter vector.
pub(crate) struct Theta<'a, 't> {
    pub values: Var<'t>,
    pub spec: &'a ModelSpec,
}

impl<'t> Theta<'_, 't> {
    pub fn get(&self, name: &str) -> Var<'t> {
        self.slice(name, 1)
    }

    /// Three consecutive entries starting at `name`.
    pub fn rgb(&self, name: &str) -> Var<'t> {
        self.slice(name, 3)
    }

    fn slice(&self, name: &str, len: usize) -> Var<'t> {
        let i = self.spec.index_of(name).unwrap_or_else(|| panic!("model has no parameter `{name}`"));
        self.values.channels(i, len)
    }

    pub fn tape(&self) -> &'t Tape {
        self.values.tape()
    }
}

/// Evaluate the forward model with `theta_c` already recorded on a tape as a
/// `(1, 1, dim_c)` grid.
pub fn generate<'t>(
    spec: &ModelSpec,
    theta_c: Var<'t>,
    theta_d: &[usize],
    z: &RandomInputs,
    rig: &CameraRig,
) -> Result<MaterialMaps<'t>> {
    if z.size != rig.resolution {
        return Err(Error::Invalid(format!("random input size {} differs from resolution {}", z.size, rig.resolution)));
    }
    let expect = Shape::flat(spec.dim_c());
    if theta_c.shape() != expect {
        return Err(Error::Count { what: "continuous parameters", expected: spec.dim_c(), got: theta_c.shape().len() });
    }
    let values = ParamVector { theta_c: theta_c.value().into_data(), theta_d: theta_d.to_vec() };
    // values mapped from unconstrained space may round one ulp past a bound
    spec.validate_with_slack(&values, 1e-12)?;
    let theta = Theta { values: theta_c, spec };
    models::generate(&theta, theta_d, z, rig)
}

/// Convenience wrapper recording `theta` as a constant on `tape`.
pub fn generate_at<'t>(tape: &'t Tape, spec: &ModelSpec, theta: &ParamVector, z: &RandomInputs, rig: &CameraRig) -> Result<MaterialMaps<'t>> {
    let v = tape.constant(Grid::from_vec(theta.theta_c.clone()));
    generate(spec, v, &theta.theta_d, z, rig)
}
