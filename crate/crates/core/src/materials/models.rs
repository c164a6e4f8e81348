use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;

use super::params::{cparam, dparam, ModelSpec, MANIFEST_VERSION};
use super::{Lobe, MaterialMaps, ModelKind, RandomInputs, Theta};
use crate::diff::{Tape, Var};
use crate::error::{Error, Result};
use crate::grid::{Grid, Shape};
use crate::render::CameraRig;
use crate::texsynth::{height_to_normals, synth_heightfield, threshold_remap, voronoi_maps, SpectrumParams};

/// Fresnel reflectance at normal incidence for index of refraction 1.5.
const DIELECTRIC_F0: f64 = 0.04;
const DIELECTRIC_IOR: f64 = 1.5;
/// Fixed absorption coefficient of the translucent demo.
pub const TRANSLUCENT_SIGMA_A: f64 = 1.0;
/// Relative index of refraction of the translucent demo's boundary.
const TRANSLUCENT_IOR: f64 = 1.3;
const TRANSLUCENT_LIGHT: f64 = 3.0;
const FIXED_VIGNETTE: f64 = 1.0;

fn light() -> super::ContinuousParam {
    cparam("light_intensity", "point light intensity", 3.0, 1.0, 0.5, 8.0)
}

fn vignette() -> super::ContinuousParam {
    cparam("vignette_sigma", "image-space Gaussian vignetting width", 1.0, 0.3, 0.3, 3.0)
}

fn rgb(prefix: &str, role: &str, mean: [f64; 3], std: f64, low: f64, high: f64) -> Vec<super::ContinuousParam> {
    ["r", "g", "b"]
        .iter()
        .zip(mean)
        .map(|(c, m)| cparam(&format!("{prefix}_{c}"), role, m, std, low, high))
        .collect()
}

pub(super) fn spec(kind: ModelKind) -> ModelSpec {
    let mut constants = BTreeMap::new();
    let mut discrete = Vec::new();
    let continuous = match kind {
        ModelKind::Bump => {
            constants.insert("ior".into(), DIELECTRIC_IOR);
            constants.insert("specular_f0".into(), DIELECTRIC_F0);
            let mut c = rgb("albedo", "diffuse albedo", [0.5, 0.5, 0.5], 0.25, 0.01, 0.99);
            c.extend([
                cparam("roughness", "GGX roughness r (alpha = r^2)", 0.4, 0.15, 0.05, 0.95),
                cparam("sigma_f", "heightfield spectrum width, cycles per texture", 6.0, 2.0, 1.5, 14.0),
                cparam("height_amp", "RMS height", 0.003, 0.0015, 0.0, 0.008),
                light(),
                vignette(),
            ]);
            c
        }
        ModelKind::Leather => {
            constants.insert("specular_f0".into(), DIELECTRIC_F0);
            discrete.push(dparam("cell_map", "choice of pre-generated cell map", 4));
            discrete.push(dparam("noise", "choice of pre-generated noise texture", 4));
            let mut c = rgb("albedo", "diffuse albedo", [0.35, 0.22, 0.14], 0.2, 0.01, 0.99);
            c.extend([
                cparam("roughness", "GGX roughness r", 0.45, 0.15, 0.05, 0.95),
                cparam("roughness_variation", "relative roughness increase in creases", 0.4, 0.2, 0.0, 0.9),
                cparam("cell_scale", "cell map scale (larger = smaller cells)", 1.5, 0.4, 0.7, 3.0),
                cparam("cell_threshold", "crease width in cell-edge distance", 0.08, 0.04, 0.01, 0.3),
                cparam("cell_sharpness", "crease edge sharpness", 30.0, 10.0, 5.0, 80.0),
                cparam("cell_height", "height of cell interiors above creases", 0.003, 0.0015, 0.0, 0.008),
                cparam("noise_height", "amplitude of noise bumps", 0.001, 0.0005, 0.0, 0.004),
                light(),
                vignette(),
            ]);
            c
        }
        ModelKind::Plaster => {
            constants.insert("specular_f0".into(), DIELECTRIC_F0);
            discrete.push(dparam("noise", "choice of pre-generated noise texture", 4));
            let mut c = rgb("albedo", "diffuse albedo", [0.7, 0.68, 0.62], 0.15, 0.01, 0.99);
            c.extend([
                cparam("roughness", "GGX roughness r", 0.6, 0.15, 0.05, 0.95),
                cparam("roughness_variation", "roughness contrast between raised and recessed areas", 0.4, 0.2, 0.0, 0.9),
                cparam("noise_scale", "spatial scale of the noise texture", 1.5, 0.4, 0.5, 3.0),
                cparam("height_amp", "height of thresholded regions", 0.003, 0.0015, 0.0, 0.008),
                cparam("threshold_level", "noise level of the threshold", 0.5, 0.12, 0.1, 0.9),
                cparam("threshold_sharpness", "threshold steepness", 20.0, 10.0, 0.0, 100.0),
                light(),
                vignette(),
            ]);
            c
        }
        ModelKind::BrushedMetal => {
            let mut c = rgb("f0", "Fresnel reflectance at normal incidence", [0.8, 0.8, 0.8], 0.15, 0.3, 1.0);
            c.extend([
                cparam("roughness_x", "GGX roughness along x", 0.25, 0.1, 0.05, 0.9),
                cparam("roughness_y", "GGX roughness along y", 0.5, 0.15, 0.05, 0.9),
                cparam("sigma_fx", "heightfield spectrum width along x", 2.0, 1.0, 0.5, 14.0),
                cparam("sigma_fy", "heightfield spectrum width along y", 10.0, 3.0, 0.5, 14.0),
                cparam("height_amp", "RMS height", 0.001, 0.0005, 0.0, 0.004),
                light(),
                vignette(),
            ]);
            c
        }
        ModelKind::Flakes => {
            constants.insert("coat_f0".into(), DIELECTRIC_F0);
            constants.insert("vignette_sigma".into(), FIXED_VIGNETTE);
            let mut c = vec![
                cparam("coat_roughness", "clear coat GGX roughness", 0.15, 0.05, 0.02, 0.5),
                cparam("flake_roughness", "flake GGX roughness", 0.2, 0.08, 0.03, 0.6),
                cparam("flake_spread", "Beckmann width of flake normals", 0.25, 0.1, 0.0, 0.8),
            ];
            c.extend(rgb("flake_f0", "flake reflectance at normal incidence", [0.7, 0.7, 0.7], 0.2, 0.05, 1.0));
            c.push(cparam("glow_roughness", "glow GGX roughness", 0.6, 0.15, 0.2, 0.95));
            c.extend(rgb("glow_f0", "glow reflectance at normal incidence", [0.3, 0.3, 0.3], 0.15, 0.01, 1.0));
            c.extend([
                cparam("blend_weight", "flake weight; glow gets the complement", 0.5, 0.2, 0.0, 1.0),
                cparam("cell_scale", "flake cell map scale", 2.0, 0.5, 0.8, 4.0),
                light(),
            ]);
            c
        }
        ModelKind::Wood => {
            constants.insert("specular_f0".into(), DIELECTRIC_F0);
            let mut c = vec![
                cparam("ring_period", "distance between growth rings", 0.08, 0.02, 0.03, 0.2),
                cparam("ring_width_noise", "ring phase perturbation by noise", 0.2, 0.1, 0.0, 1.0),
            ];
            c.extend(rgb("early", "earlywood color", [0.75, 0.55, 0.35], 0.15, 0.02, 0.98));
            c.extend(rgb("late", "latewood color", [0.45, 0.28, 0.15], 0.15, 0.02, 0.98));
            c.extend([
                cparam("color_noise", "relative albedo darkening by fine noise", 0.15, 0.08, 0.0, 0.5),
                cparam("ring_sharpness", "steepness of the early/late transition", 8.0, 3.0, 1.0, 30.0),
                cparam("plane_tilt", "angle between cutting plane and tree cross-section", 1.2, 0.3, 0.0, 1.5),
                cparam("plane_azimuth", "rotation of the cutting plane about the tree axis", 0.0, 0.3, -0.8, 0.8),
                cparam("plane_offset", "distance of the cutting plane from the pith", 0.25, 0.1, 0.0, 0.6),
                cparam("distortion_amp", "ring phase distortion amplitude", 0.5, 0.3, 0.0, 2.0),
                cparam("distortion_freq", "spatial scale of the distortion noise", 1.0, 0.3, 0.3, 2.5),
                cparam("fine_noise_amp", "height amplitude of fine noise", 0.0005, 0.0003, 0.0, 0.002),
                cparam("fine_noise_scale", "spatial scale of the fine noise", 2.0, 0.5, 0.5, 4.0),
                cparam("roughness", "base GGX roughness", 0.45, 0.15, 0.1, 0.9),
                cparam("roughness_ring_mod", "relative roughness change across a ring", 0.4, 0.3, 0.0, 1.5),
                cparam("height_amp", "latewood relief height", 0.002, 0.001, 0.0, 0.006),
                cparam("latewood_fraction", "fraction of each ring that is latewood", 0.35, 0.1, 0.1, 0.9),
                light(),
                vignette(),
            ]);
            c
        }
        ModelKind::TranslucentDemo => {
            constants.insert("sigma_a".into(), TRANSLUCENT_SIGMA_A);
            constants.insert("ior".into(), TRANSLUCENT_IOR);
            constants.insert("light_intensity".into(), TRANSLUCENT_LIGHT);
            constants.insert("vignette_sigma".into(), FIXED_VIGNETTE);
            vec![
                cparam("sigma_s", "scattering coefficient", 2.0, 2.0, 0.1, 10.0),
                cparam("g", "phase function asymmetry", 0.0, 0.5, -0.95, 0.95),
            ]
        }
    };
    ModelSpec { model: kind, version: MANIFEST_VERSION, continuous, discrete, constants }
}

pub(super) fn generate<'t>(theta: &Theta<'_, 't>, theta_d: &[usize], z: &RandomInputs, rig: &CameraRig) -> Result<MaterialMaps<'t>> {
    match theta.spec.model {
        ModelKind::Bump => bump(theta, z, rig),
        ModelKind::Leather => leather(theta, theta_d, z, rig),
        ModelKind::Plaster => plaster(theta, theta_d, z, rig),
        ModelKind::BrushedMetal => brushed_metal(theta, z, rig),
        ModelKind::Flakes => flakes(theta, z, rig),
        ModelKind::Wood => wood(theta, z, rig),
        ModelKind::TranslucentDemo => translucent(theta, rig),
    }
}

fn flat_normal(tape: &Tape) -> Var<'_> {
    tape.constant(Grid::new(Shape::new(1, 1, 3), vec![0.0, 0.0, 1.0]))
}

fn dielectric_lobe<'t>(tape: &'t Tape, roughness: Var<'t>) -> Lobe<'t> {
    Lobe { roughness, f0: tape.scalar(DIELECTRIC_F0), weight: None, normal: None }
}

fn bump<'t>(theta: &Theta<'_, 't>, z: &RandomInputs, rig: &CameraRig) -> Result<MaterialMaps<'t>> {
    let tape = theta.tape();
    let sigma = theta.get("sigma_f");
    let spec = SpectrumParams { sigma_fx: sigma, sigma_fy: sigma, amplitude: theta.get("height_amp") };
    let height = synth_heightfield(tape, &spec, &z.phases[0])?;
    Ok(MaterialMaps {
        albedo: Some(theta.rgb("albedo_r")),
        normal: height_to_normals(height, rig.texel_size()),
        lobes: vec![dielectric_lobe(tape, theta.get("roughness"))],
        height: Some(height),
        light_intensity: theta.get("light_intensity"),
        vignette_sigma: theta.get("vignette_sigma"),
    })
}

fn choice(theta_d: &[usize], spec: &ModelSpec, name: &str) -> usize {
    theta_d[spec.discrete_index_of(name).expect("discrete parameter exists")]
}

fn leather<'t>(theta: &Theta<'_, 't>, theta_d: &[usize], z: &RandomInputs, rig: &CameraRig) -> Result<MaterialMaps<'t>> {
    let tape = theta.tape();
    let cells = &z.bank.cells[choice(theta_d, theta.spec, "cell_map")];
    let noise = tape.constant(z.bank.textures[choice(theta_d, theta.spec, "noise")].as_ref().clone());
    let scaled = voronoi_maps(tape, cells, theta.get("cell_scale"), z.size);
    // 0 in the creases along cell borders, 1 inside cells
    let interior = threshold_remap(scaled.edge, theta.get("cell_threshold"), theta.get("cell_sharpness"));
    let height = interior * theta.get("cell_height") + noise * theta.get("noise_height");
    let crease = 1.0 - interior;
    let roughness = theta.get("roughness") * ((crease - 0.5) * theta.get("roughness_variation") + 1.0);
    let albedo = theta.rgb("albedo_r") * (interior * 0.3 + 0.7);
    Ok(MaterialMaps {
        albedo: Some(albedo),
        normal: height_to_normals(height, rig.texel_size()),
        lobes: vec![dielectric_lobe(tape, roughness)],
        height: Some(height),
        light_intensity: theta.get("light_intensity"),
        vignette_sigma: theta.get("vignette_sigma"),
    })
}

fn plaster<'t>(theta: &Theta<'_, 't>, theta_d: &[usize], z: &RandomInputs, rig: &CameraRig) -> Result<MaterialMaps<'t>> {
    let tape = theta.tape();
    let texture = &z.bank.textures[choice(theta_d, theta.spec, "noise")];
    let out = Shape::new(z.size, z.size, 1);
    let noise = tape.resample(texture, theta.get("noise_scale"), out);
    let mask = threshold_remap(noise, theta.get("threshold_level"), theta.get("threshold_sharpness"));
    let height = mask * theta.get("height_amp");
    let roughness = theta.get("roughness") * ((mask - 0.5) * theta.get("roughness_variation") + 1.0);
    Ok(MaterialMaps {
        albedo: Some(theta.rgb("albedo_r")),
        normal: height_to_normals(height, rig.texel_size()),
        lobes: vec![dielectric_lobe(tape, roughness)],
        height: Some(height),
        light_intensity: theta.get("light_intensity"),
        vignette_sigma: theta.get("vignette_sigma"),
    })
}

fn brushed_metal<'t>(theta: &Theta<'_, 't>, z: &RandomInputs, rig: &CameraRig) -> Result<MaterialMaps<'t>> {
    let spec = SpectrumParams {
        sigma_fx: theta.get("sigma_fx"),
        sigma_fy: theta.get("sigma_fy"),
        amplitude: theta.get("height_amp"),
    };
    let height = synth_heightfield(theta.tape(), &spec, &z.phases[0])?;
    let roughness = Var::concat_channels(&[theta.get("roughness_x"), theta.get("roughness_y")]);
    Ok(MaterialMaps {
        albedo: None,
        normal: height_to_normals(height, rig.texel_size()),
        lobes: vec![Lobe { roughness, f0: theta.rgb("f0_r"), weight: None, normal: None }],
        height: Some(height),
        light_intensity: theta.get("light_intensity"),
        vignette_sigma: theta.get("vignette_sigma"),
    })
}

fn flakes<'t>(theta: &Theta<'_, 't>, z: &RandomInputs, _rig: &CameraRig) -> Result<MaterialMaps<'t>> {
    let tape = theta.tape();
    let slopes = tape.resample(&z.flake_slopes, theta.get("cell_scale"), Shape::new(z.size, z.size, 2));
    // slope variance spread²/2 per axis matches a Beckmann lobe of width `spread`
    let scaled = slopes * (theta.get("flake_spread") * FRAC_1_SQRT_2);
    let one = tape.constant(Grid::filled(Shape::new(z.size, z.size, 1), 1.0));
    let flake_normal = Var::concat_channels(&[-scaled.channel(0), -scaled.channel(1), one]).normalize();
    let w = theta.get("blend_weight");
    let flat = flat_normal(tape);
    Ok(MaterialMaps {
        albedo: None,
        normal: flat,
        lobes: vec![
            dielectric_lobe(tape, theta.get("coat_roughness")),
            Lobe { roughness: theta.get("flake_roughness"), f0: theta.rgb("flake_f0_r"), weight: Some(w), normal: Some(flake_normal) },
            Lobe { roughness: theta.get("glow_roughness"), f0: theta.rgb("glow_f0_r"), weight: Some(1.0 - w), normal: None },
        ],
        height: None,
        light_intensity: theta.get("light_intensity"),
        vignette_sigma: tape.scalar(FIXED_VIGNETTE),
    })
}

/// Ring phase of the wood model: distance from the tree axis in units of the
/// ring period, perturbed by noise. Integer values fall between rings.
pub fn wood_ring_phase<'t>(
    tape: &'t Tape,
    rig: &CameraRig,
    z: &RandomInputs,
    period: Var<'t>,
    tilt: Var<'t>,
    azimuth: Var<'t>,
    offset: Var<'t>,
    distortion_amp: Var<'t>,
    distortion_freq: Var<'t>,
    width_noise: Var<'t>,
) -> Var<'t> {
    let res = rig.resolution;
    let (xs, ys) = rig.plane_coordinates();
    let (xs, ys) = (tape.constant(xs), tape.constant(ys));
    let (ct, st) = (tilt.cos(), tilt.sin());
    let (cp, sp) = (azimuth.cos(), azimuth.sin());
    // cutting plane spanned by e1 = (cp, sp, 0) and e2 = (-sp ct, cp ct, st),
    // shifted along its normal n = (sp st, -cp st, ct); tree axis is z
    let px = xs * cp - ys * (sp * ct) + offset * (sp * st);
    let py = xs * sp + ys * (cp * ct) - offset * (cp * st);
    let radius = (px.square() + py.square()).add_scalar(1e-12).sqrt();
    let out = Shape::new(res, res, 1);
    let distortion = tape.resample(&z.bank.textures[1], distortion_freq, out).add_scalar(-0.5);
    let ring_noise = tape.constant(z.bank.textures[0].as_ref().clone()).add_scalar(-0.5);
    radius / period + distortion * distortion_amp + ring_noise * width_noise
}

fn wood<'t>(theta: &Theta<'_, 't>, z: &RandomInputs, rig: &CameraRig) -> Result<MaterialMaps<'t>> {
    let tape = theta.tape();
    let phase = wood_ring_phase(
        tape,
        rig,
        z,
        theta.get("ring_period"),
        theta.get("plane_tilt"),
        theta.get("plane_azimuth"),
        theta.get("plane_offset"),
        theta.get("distortion_amp"),
        theta.get("distortion_freq"),
        theta.get("ring_width_noise"),
    );
    let profile = 0.5 - (phase * std::f64::consts::TAU).cos() * 0.5;
    let late = ((profile - (1.0 - theta.get("latewood_fraction"))) * theta.get("ring_sharpness")).sigmoid();
    let fine = tape.resample(&z.bank.textures[2], theta.get("fine_noise_scale"), Shape::new(z.size, z.size, 1));
    let early_c = theta.rgb("early_r");
    let late_c = theta.rgb("late_r");
    let albedo = (early_c + (late_c - early_c) * late) * (1.0 - fine * theta.get("color_noise"));
    let roughness = theta.get("roughness") * ((late - 0.5) * theta.get("roughness_ring_mod") + 1.0);
    let height = late * theta.get("height_amp") + fine * theta.get("fine_noise_amp");
    Ok(MaterialMaps {
        albedo: Some(albedo),
        normal: height_to_normals(height, rig.texel_size()),
        lobes: vec![dielectric_lobe(tape, roughness)],
        height: Some(height),
        light_intensity: theta.get("light_intensity"),
        vignette_sigma: theta.get("vignette_sigma"),
    })
}

/// Internal diffuse reflectance of a boundary with relative index `eta`.
fn diffuse_fresnel(eta: f64) -> f64 {
    -1.440 / (eta * eta) + 0.710 / eta + 0.668 + 0.0636 * eta
}

/// Total diffuse reflectance of a semi-infinite scattering medium in the
/// diffusion approximation, as a function of the reduced albedo.
pub fn translucent_reflectance<'t>(reduced_albedo: Var<'t>) -> Var<'t> {
    let fdr = diffuse_fresnel(TRANSLUCENT_IOR);
    let a = (1.0 + fdr) / (1.0 - fdr);
    let root = ((1.0 - reduced_albedo) * 3.0).max_scalar(0.0).sqrt();
    reduced_albedo * 0.5 * ((root * (-4.0 / 3.0 * a)).exp() + 1.0) * (-root).exp()
}

fn translucent<'t>(theta: &Theta<'_, 't>, _rig: &CameraRig) -> Result<MaterialMaps<'t>> {
    let tape = theta.tape();
    let g = theta.get("g");
    let gv = g.item();
    if gv <= -1.0 || gv >= 1.0 {
        return Err(Error::OutOfBounds { name: "g".into(), value: gv, low: -1.0, high: 1.0 });
    }
    // depends on (sigma_s, g) only through the reduced scattering coefficient
    let reduced = theta.get("sigma_s") * (1.0 - g);
    let reduced_albedo = reduced / (reduced + TRANSLUCENT_SIGMA_A);
    let reflectance = translucent_reflectance(reduced_albedo);
    Ok(MaterialMaps {
        albedo: Some(reflectance.broadcast_to(Shape::new(1, 1, 3))),
        normal: flat_normal(tape),
        lobes: Vec::new(),
        height: None,
        light_intensity: tape.scalar(TRANSLUCENT_LIGHT),
        vignette_sigma: tape.scalar(FIXED_VIGNETTE),
    })
}
