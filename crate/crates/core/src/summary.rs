//! Summary functions: differentiable maps from images to flat feature vectors
//! that ignore where features sit and keep what they look like.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diff::{BinAssignment, Conv2dLayer, Tape, Var};
use crate::error::{Error, Result};
use crate::grid::{Grid, Shape};
use crate::materials::ModelKind;

/// Stabilizer inside FFT magnitudes, keeping them differentiable at zero.
pub const FFT_MAGNITUDE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinLayout {
    /// Equal-width annuli around the image center.
    Concentric,
    /// Equal-width column strips.
    Vertical,
}

/// One named slice of a summary vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub weight: f64,
}

/// Flat summary values with their component layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryVector {
    pub values: Vec<f64>,
    pub layout: Vec<Component>,
}

impl SummaryVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn component(&self, name: &str) -> Option<&[f64]> {
        self.layout.iter().find(|c| c.name == name).map(|c| &self.values[c.offset..c.offset + c.len])
    }

    /// Euclidean distance; layouts must agree.
    pub fn distance(&self, other: &SummaryVector) -> Result<f64> {
        self.check_layout(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
    }

    pub fn check_layout(&self, other: &SummaryVector) -> Result<()> {
        if self.layout != other.layout || self.values.len() != other.values.len() {
            return Err(Error::Invalid("summary layouts differ".into()));
        }
        Ok(())
    }
}

/// Channel-wise image mean, shape `(1, 1, C)`.
pub fn summary_mean<'t>(img: Var<'t>) -> Var<'t> {
    img.mean_pixels()
}

/// Pixel-to-bin assignment for a layout.
pub fn bin_assignment(layout: BinLayout, height: usize, width: usize, k: usize) -> Result<BinAssignment> {
    if k == 0 {
        return Err(Error::Invalid("bin count must be at least 1".into()));
    }
    let assignment = match layout {
        BinLayout::Vertical => {
            if width % k != 0 {
                return Err(Error::Invalid(format!("{k} vertical bins do not divide width {width}")));
            }
            let strip = width / k;
            (0..height * width).map(|i| Some((i % width) / strip)).collect()
        }
        BinLayout::Concentric => {
            let (cy, cx) = (height as f64 / 2.0, width as f64 / 2.0);
            let rmax = (cx * cx + cy * cy).sqrt();
            (0..height * width)
                .map(|i| {
                    let (y, x) = ((i / width) as f64 + 0.5, (i % width) as f64 + 0.5);
                    let r = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt() / rmax;
                    Some(((r * k as f64) as usize).min(k - 1))
                })
                .collect()
        }
    };
    Ok(BinAssignment::new(height, width, k, assignment))
}

/// Per-bin channel means, shape `(1, k, C)`.
pub fn summary_bins<'t>(img: Var<'t>, layout: BinLayout, k: usize) -> Result<Var<'t>> {
    let s = img.shape();
    let bins = Arc::new(bin_assignment(layout, s.height, s.width, k)?);
    Ok(img.bin_mean(&bins))
}

/// Vertical-bin means followed by the FFT magnitudes of each bin's column
/// profile, first `height / 2` frequencies per bin and channel.
pub fn summary_fft_bins<'t>(img: Var<'t>, k: usize) -> Result<Var<'t>> {
    let s = img.shape();
    if !s.height.is_power_of_two() {
        return Err(Error::Invalid(format!("image height {} must be a power of two", s.height)));
    }
    let means = summary_bins(img, BinLayout::Vertical, k)?;
    let profiles = img.column_profiles(k);
    let rows = profiles.shape().height;
    let spectrum = profiles.fft1_batch()?;
    let mag = spectrum.norm_sqr().add_scalar(FFT_MAGNITUDE_EPS).sqrt();
    let kept = mag.reshape(Shape::new(rows, 1, s.height)).channels(0, s.height / 2);
    Ok(Var::concat_flat(&[means, kept]))
}

/// One layer of a [`FeatureNet`].
#[derive(Debug, Clone)]
pub enum Layer {
    Conv(Arc<Conv2dLayer>),
    Rectify,
    AvgPool,
    /// Record a Gram matrix of the current feature maps.
    Tap,
}

const WEIGHTS_MAGIC: &[u8; 4] = b"MSFN";
const WEIGHTS_VERSION: u32 = 1;

/// Convolutional feature extractor with fixed weights.
#[derive(Debug, Clone)]
pub struct FeatureNet {
    pub layers: Vec<Layer>,
}

impl FeatureNet {
    /// Validate channel flow and tap placement for RGB input.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let mut channels = 3;
        for (i, layer) in layers.iter().enumerate() {
            match layer {
                Layer::Conv(c) => {
                    if c.in_channels != channels {
                        return Err(Error::Invalid(format!(
                            "layer {i}: convolution expects {} channels, previous layer gives {channels}",
                            c.in_channels
                        )));
                    }
                    if c.weights.iter().chain(&c.bias).any(|w| !w.is_finite()) {
                        return Err(Error::Invalid(format!("layer {i}: non-finite weight")));
                    }
                    channels = c.out_channels;
                }
                Layer::AvgPool => {
                    if i == 0 || !matches!(layers[i - 1], Layer::Tap) {
                        return Err(Error::Invalid(format!("layer {i}: pooling must follow a tap")));
                    }
                }
                Layer::Rectify | Layer::Tap => {}
            }
        }
        if !layers.iter().any(|l| matches!(l, Layer::Tap)) {
            return Err(Error::Invalid("feature net has no tap".into()));
        }
        Ok(Self { layers })
    }

    /// Three blocks of 3x3 convolution, rectification, tap and 2x average
    /// pooling with widths 16, 32, 64. Weights are Gaussian with variance
    /// `1 / fan_in` from a fixed seed; biases are zero.
    pub fn random_default() -> Self {
        Self::random(&[16, 32, 64], 3, 0x5eed_f00d)
    }

    pub fn random(widths: &[usize], kernel: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut cin = 3;
        for &cout in widths {
            let fan_in = (cin * kernel * kernel) as f64;
            let normal = Normal::new(0.0, fan_in.sqrt().recip()).expect("positive std");
            let w = (0..cout * cin * kernel * kernel).map(|_| normal.sample(&mut rng)).collect();
            let layer = Conv2dLayer::new(cout, cin, kernel, w, vec![0.0; cout]).expect("consistent sizes");
            layers.extend([Layer::Conv(Arc::new(layer)), Layer::Rectify, Layer::Tap, Layer::AvgPool]);
            cin = cout;
        }
        Self::new(layers).expect("default net is valid")
    }

    /// Channel counts at each tap.
    pub fn tap_channels(&self) -> Vec<usize> {
        let mut channels = 3;
        let mut taps = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => channels = c.out_channels,
                Layer::Tap => taps.push(channels),
                _ => {}
            }
        }
        taps
    }

    /// Smallest input side that survives every pooling step.
    pub fn min_input_size(&self) -> usize {
        1 << self.layers.iter().filter(|l| matches!(l, Layer::AvgPool)).count()
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(WEIGHTS_MAGIC)?;
        w.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => {
                    w.write_all(&[0])?;
                    for n in [c.out_channels, c.in_channels, c.kernel] {
                        w.write_all(&(n as u32).to_le_bytes())?;
                    }
                    for v in c.weights.iter().chain(&c.bias) {
                        w.write_all(&(*v as f32).to_le_bytes())?;
                    }
                }
                Layer::Rectify => w.write_all(&[1])?,
                Layer::AvgPool => w.write_all(&[2])?,
                Layer::Tap => w.write_all(&[3])?,
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let io = |e: std::io::Error| Error::Invalid(format!("weights file: {e}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != WEIGHTS_MAGIC {
            return Err(Error::Invalid("weights file: bad magic".into()));
        }
        let read_u32 = |r: &mut dyn Read| -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(io)?;
            Ok(u32::from_le_bytes(b))
        };
        let version = read_u32(&mut r)?;
        if version != WEIGHTS_VERSION {
            return Err(Error::Invalid(format!("weights file: unsupported version {version}")));
        }
        let count = read_u32(&mut r)?;
        let mut layers = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag).map_err(io)?;
            layers.push(match tag[0] {
                0 => {
                    let out = read_u32(&mut r)? as usize;
                    let inp = read_u32(&mut r)? as usize;
                    let k = read_u32(&mut r)? as usize;
                    let n = out
                        .checked_mul(inp)
                        .and_then(|v| v.checked_mul(k * k))
                        .filter(|&n| n <= 1 << 28)
                        .ok_or_else(|| Error::Invalid("weights file: layer too large".into()))?;
                    let mut floats = vec![0u8; (n + out) * 4];
                    r.read_exact(&mut floats).map_err(io)?;
                    let vals: Vec<f64> = floats.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
                    let (w, b) = vals.split_at(n);
                    Layer::Conv(Arc::new(Conv2dLayer::new(out, inp, k, w.to_vec(), b.to_vec())?))
                }
                1 => Layer::Rectify,
                2 => Layer::AvgPool,
                3 => Layer::Tap,
                t => return Err(Error::Invalid(format!("weights file: unknown layer tag {t}"))),
            });
        }
        Self::new(layers)
    }
}

/// Concatenated Gram matrices `G_ij = mean(F_i · F_j)` at every tap.
pub fn summary_gram<'t>(img: Var<'t>, net: &FeatureNet) -> Result<Var<'t>> {
    let s = img.shape();
    if s.channels != 3 {
        return Err(Error::Invalid(format!("feature net expects RGB input, got {s}")));
    }
    if s.height.min(s.width) < net.min_input_size() {
        return Err(Error::Invalid(format!("image {s} smaller than the net's receptive field")));
    }
    let mut x = img;
    let mut grams = Vec::new();
    for layer in &net.layers {
        x = match layer {
            Layer::Conv(c) => x.conv2d(c, 1, c.kernel / 2)?,
            Layer::Rectify => x.relu(),
            Layer::AvgPool => x.avg_pool2(),
            Layer::Tap => {
                grams.push(x.gram());
                x
            }
        };
    }
    Ok(Var::concat_flat(&grams))
}

/// A summary operation and its settings.
#[derive(Debug, Clone)]
pub enum SummaryOp {
    Mean,
    Bins { layout: BinLayout, k: usize },
    FftBins { k: usize },
    Gram(Arc<FeatureNet>),
}

impl SummaryOp {
    pub fn name(&self) -> String {
        match self {
            SummaryOp::Mean => "mean".into(),
            SummaryOp::Bins { layout: BinLayout::Concentric, k } => format!("concentric_bins_{k}"),
            SummaryOp::Bins { layout: BinLayout::Vertical, k } => format!("vertical_bins_{k}"),
            SummaryOp::FftBins { k } => format!("fft_bins_{k}"),
            SummaryOp::Gram(_) => "gram".into(),
        }
    }

    pub fn apply<'t>(&self, img: Var<'t>) -> Result<Var<'t>> {
        Ok(match self {
            SummaryOp::Mean => summary_mean(img),
            SummaryOp::Bins { layout, k } => summary_bins(img, *layout, *k)?,
            SummaryOp::FftBins { k } => summary_fft_bins(img, *k)?,
            SummaryOp::Gram(net) => summary_gram(img, net)?,
        }
        .flatten())
    }
}

/// Weighted concatenation of summary operations.
#[derive(Debug, Clone)]
pub struct Summary {
    pub components: Vec<(SummaryOp, f64)>,
}

impl Summary {
    pub fn new(components: Vec<(SummaryOp, f64)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Invalid("summary needs at least one component".into()));
        }
        if components.iter().any(|(_, w)| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Invalid("summary weights must be finite and non-negative".into()));
        }
        Ok(Self { components })
    }

    /// Gram features plus mean for most models, binned column spectra for
    /// brushed metal and the plain mean for the translucent demo.
    pub fn default_for(model: ModelKind) -> Self {
        let components = match model {
            ModelKind::BrushedMetal => vec![(SummaryOp::FftBins { k: 64 }, 1.0)],
            ModelKind::TranslucentDemo => vec![(SummaryOp::Mean, 1.0)],
            _ => vec![
                (SummaryOp::Gram(Arc::new(FeatureNet::random_default())), 1.0),
                (SummaryOp::Mean, 1.0),
            ],
        };
        Self { components }
    }

    pub fn single(op: SummaryOp) -> Self {
        Self { components: vec![(op, 1.0)] }
    }

    /// Differentiable summary with weights folded into the values, plus layout.
    pub fn apply<'t>(&self, img: Var<'t>) -> Result<(Var<'t>, Vec<Component>)> {
        let mut parts = Vec::with_capacity(self.components.len());
        let mut layout = Vec::with_capacity(self.components.len());
        let mut offset = 0;
        for (op, w) in &self.components {
            let v = op.apply(img)?;
            let len = v.shape().len();
            layout.push(Component { name: op.name(), offset, len, weight: *w });
            offset += len;
            parts.push(if *w == 1.0 { v } else { v * *w });
        }
        let out = if parts.len() == 1 { parts[0] } else { Var::concat_flat(&parts) };
        Ok((out, layout))
    }

    pub fn evaluate(&self, img: &Grid) -> Result<SummaryVector> {
        let tape = Tape::new();
        let (v, layout) = self.apply(tape.constant(img.clone()))?;
        Ok(SummaryVector { values: v.value().into_data(), layout })
    }
}
