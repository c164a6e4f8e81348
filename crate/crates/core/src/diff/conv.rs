//! Convolution, pooling, Gram matrices and binned reductions.

use std::sync::Arc;

use super::{DiffError, Op, Var};
use crate::grid::{Grid, Shape};

/// A bank of fixed convolution kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dLayer {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    /// Row-major `[out][in][ky][kx]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    // [ky][kx][out][in], contiguous over input channels
    packed: Vec<f64>,
}

impl Conv2dLayer {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self, DiffError> {
        let shape_err = |detail: String| DiffError::Shape { primitive: "conv2d", detail };
        if kernel % 2 == 0 {
            return Err(shape_err(format!("kernel size {kernel} must be odd")));
        }
        if weights.len() != out_channels * in_channels * kernel * kernel {
            return Err(shape_err(format!(
                "expected {} weights for {out_channels}x{in_channels}x{kernel}x{kernel}, got {}",
                out_channels * in_channels * kernel * kernel,
                weights.len()
            )));
        }
        if bias.len() != out_channels {
            return Err(shape_err(format!("expected {out_channels} biases, got {}", bias.len())));
        }
        let mut packed = vec![0.0; weights.len()];
        for o in 0..out_channels {
            for i in 0..in_channels {
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let src = ((o * in_channels + i) * kernel + ky) * kernel + kx;
                        let dst = ((ky * kernel + kx) * out_channels + o) * in_channels + i;
                        packed[dst] = weights[src];
                    }
                }
            }
        }
        Ok(Conv2dLayer { out_channels, in_channels, kernel, weights, bias, packed })
    }

    pub fn weight(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.weights[((o * self.in_channels + i) * self.kernel + ky) * self.kernel + kx]
    }

    fn output_size(&self, n: usize, stride: usize, pad: usize) -> Option<usize> {
        (n + 2 * pad).checked_sub(self.kernel).map(|v| v / stride + 1)
    }
}

pub(super) fn conv2d_op<'t>(
    v: Var<'t>,
    layer: &Arc<Conv2dLayer>,
    stride: usize,
    pad: usize,
) -> Result<Var<'t>, DiffError> {
    let s = v.shape();
    let err = |detail: String| DiffError::Shape { primitive: "conv2d", detail };
    if s.channels != layer.in_channels {
        return Err(err(format!("input has {} channels, kernel expects {}", s.channels, layer.in_channels)));
    }
    if stride == 0 {
        return Err(err("stride must be positive".into()));
    }
    let (Some(ho), Some(wo)) = (layer.output_size(s.height, stride, pad), layer.output_size(s.width, stride, pad))
    else {
        return Err(err(format!("input {s} smaller than kernel {}", layer.kernel)));
    };
    let out_shape = Shape::new(ho, wo, layer.out_channels);
    let value = v.tape.with_value(v.id, |g| {
        let input = g.data();
        let (k, co_n, ci_n) = (layer.kernel, layer.out_channels, layer.in_channels);
        let mut out = vec![0.0; out_shape.len()];
        for oy in 0..ho {
            for ox in 0..wo {
                let o_base = (oy * wo + ox) * co_n;
                let acc = &mut out[o_base..o_base + co_n];
                acc.copy_from_slice(&layer.bias);
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= s.height as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= s.width as isize {
                            continue;
                        }
                        let i_base = (iy as usize * s.width + ix as usize) * ci_n;
                        let px = &input[i_base..i_base + ci_n];
                        let w_base = (ky * k + kx) * co_n * ci_n;
                        for (o, a) in acc.iter_mut().enumerate() {
                            let w = &layer.packed[w_base + o * ci_n..w_base + (o + 1) * ci_n];
                            *a += w.iter().zip(px).map(|(w, x)| w * x).sum::<f64>();
                        }
                    }
                }
            }
        }
        Grid::new(out_shape, out)
    });
    Ok(v.tape.push(value, Op::Conv2d { a: v.id, layer: Arc::clone(layer), stride, pad }))
}

pub(super) fn conv2d_backward(
    in_shape: Shape,
    out_shape: Shape,
    layer: &Conv2dLayer,
    stride: usize,
    pad: usize,
    g: &[f64],
) -> Vec<f64> {
    let (k, co_n, ci_n) = (layer.kernel, layer.out_channels, layer.in_channels);
    let mut gin = vec![0.0; in_shape.len()];
    for oy in 0..out_shape.height {
        for ox in 0..out_shape.width {
            let go = &g[(oy * out_shape.width + ox) * co_n..(oy * out_shape.width + ox + 1) * co_n];
            for ky in 0..k {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= in_shape.height as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= in_shape.width as isize {
                        continue;
                    }
                    let i_base = (iy as usize * in_shape.width + ix as usize) * ci_n;
                    let gi = &mut gin[i_base..i_base + ci_n];
                    let w_base = (ky * k + kx) * co_n * ci_n;
                    for (o, gv) in go.iter().enumerate() {
                        if *gv == 0.0 {
                            continue;
                        }
                        let w = &layer.packed[w_base + o * ci_n..w_base + (o + 1) * ci_n];
                        for (a, w) in gi.iter_mut().zip(w) {
                            *a += gv * w;
                        }
                    }
                }
            }
        }
    }
    gin
}

pub(super) fn avg_pool2_op<'t>(v: Var<'t>) -> Var<'t> {
    let value = v.tape.with_value(v.id, |g| {
        let s = g.shape();
        let out_shape = Shape::new(s.height / 2, s.width / 2, s.channels);
        Grid::from_fn(out_shape, |y, x, c| {
            0.25 * (g.get(2 * y, 2 * x, c)
                + g.get(2 * y, 2 * x + 1, c)
                + g.get(2 * y + 1, 2 * x, c)
                + g.get(2 * y + 1, 2 * x + 1, c))
        })
    });
    v.tape.push(value, Op::AvgPool2 { a: v.id })
}

pub(super) fn avg_pool2_backward(in_shape: Shape, g: &[f64]) -> Vec<f64> {
    let out = Shape::new(in_shape.height / 2, in_shape.width / 2, in_shape.channels);
    let mut gin = vec![0.0; in_shape.len()];
    for y in 0..out.height {
        for x in 0..out.width {
            for c in 0..out.channels {
                let gv = 0.25 * g[out.index(y, x, c)];
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    gin[in_shape.index(2 * y + dy, 2 * x + dx, c)] += gv;
                }
            }
        }
    }
    gin
}

pub(super) fn gram_op<'t>(v: Var<'t>) -> Var<'t> {
    let value = v.tape.with_value(v.id, |g| {
        let s = g.shape();
        let c = s.channels;
        let mut acc = vec![0.0; c * c];
        for px in g.data().chunks_exact(c) {
            for i in 0..c {
                let fi = px[i];
                if fi == 0.0 {
                    continue;
                }
                let row = &mut acc[i * c..(i + 1) * c];
                for (a, fj) in row.iter_mut().zip(px) {
                    *a += fi * fj;
                }
            }
        }
        let inv = 1.0 / s.pixels() as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        Grid::from_vec(acc)
    });
    v.tape.push(value, Op::Gram { a: v.id })
}

pub(super) fn gram_backward(input: &Grid, g: &[f64]) -> Vec<f64> {
    let s = input.shape();
    let c = s.channels;
    let inv = 1.0 / s.pixels() as f64;
    // symmetrized upstream: d/dF_i of sum_ij g_ij F_i F_j
    let mut sym = vec![0.0; c * c];
    for i in 0..c {
        for j in 0..c {
            sym[i * c + j] = (g[i * c + j] + g[j * c + i]) * inv;
        }
    }
    let mut gin = vec![0.0; input.len()];
    for (px, gp) in input.data().chunks_exact(c).zip(gin.chunks_exact_mut(c)) {
        for j in 0..c {
            let fj = px[j];
            if fj == 0.0 {
                continue;
            }
            for (i, gv) in gp.iter_mut().enumerate() {
                *gv += sym[i * c + j] * fj;
            }
        }
    }
    gin
}

/// Fixed assignment of pixels to bins.
#[derive(Debug, Clone, PartialEq)]
pub struct BinAssignment {
    pub height: usize,
    pub width: usize,
    pub bins: usize,
    /// Bin index per pixel (row-major); `None` excludes the pixel.
    pub assignment: Vec<Option<usize>>,
    pub counts: Vec<usize>,
}

impl BinAssignment {
    pub fn new(height: usize, width: usize, bins: usize, assignment: Vec<Option<usize>>) -> Self {
        assert_eq!(assignment.len(), height * width);
        let mut counts = vec![0; bins];
        for b in assignment.iter().flatten() {
            counts[*b] += 1;
        }
        BinAssignment { height, width, bins, assignment, counts }
    }
}

pub(super) fn bin_mean_op<'t>(v: Var<'t>, bins: &Arc<BinAssignment>) -> Var<'t> {
    let value = v.tape.with_value(v.id, |g| {
        let s = g.shape();
        assert_eq!((s.height, s.width), (bins.height, bins.width), "bin layout does not match image");
        let c = s.channels;
        let mut acc = vec![0.0; bins.bins * c];
        for (px, b) in g.data().chunks_exact(c).zip(&bins.assignment) {
            if let Some(b) = b {
                for (a, v) in acc[b * c..(b + 1) * c].iter_mut().zip(px) {
                    *a += v;
                }
            }
        }
        for (b, n) in bins.counts.iter().enumerate() {
            let inv = if *n > 0 { 1.0 / *n as f64 } else { 0.0 };
            acc[b * c..(b + 1) * c].iter_mut().for_each(|a| *a *= inv);
        }
        Grid::new(Shape::new(1, bins.bins, c), acc)
    });
    v.tape.push(value, Op::BinMean { a: v.id, bins: Arc::clone(bins) })
}

pub(super) fn bin_mean_backward(in_shape: Shape, bins: &BinAssignment, g: &[f64]) -> Vec<f64> {
    let c = in_shape.channels;
    let mut gin = vec![0.0; in_shape.len()];
    for (gp, b) in gin.chunks_exact_mut(c).zip(&bins.assignment) {
        if let Some(b) = b {
            let inv = 1.0 / bins.counts[*b] as f64;
            for (gv, go) in gp.iter_mut().zip(&g[b * c..(b + 1) * c]) {
                *gv += go * inv;
            }
        }
    }
    gin
}

pub(super) fn column_profiles_op<'t>(v: Var<'t>, k: usize) -> Var<'t> {
    let value = v.tape.with_value(v.id, |g| {
        let s = g.shape();
        assert!(k > 0 && s.width % k == 0, "strip count {k} must divide width {}", s.width);
        let strip = s.width / k;
        let c = s.channels;
        let out_shape = Shape::new(k * c, s.height, 1);
        let mut out = vec![0.0; out_shape.len()];
        let inv = 1.0 / strip as f64;
        for y in 0..s.height {
            for x in 0..s.width {
                let b = x / strip;
                for ch in 0..c {
                    out[(b * c + ch) * s.height + y] += g.get(y, x, ch) * inv;
                }
            }
        }
        Grid::new(out_shape, out)
    });
    v.tape.push(value, Op::ColumnProfiles { a: v.id, bins: k })
}

pub(super) fn column_profiles_backward(in_shape: Shape, k: usize, g: &[f64]) -> Vec<f64> {
    let strip = in_shape.width / k;
    let c = in_shape.channels;
    let inv = 1.0 / strip as f64;
    let mut gin = vec![0.0; in_shape.len()];
    for y in 0..in_shape.height {
        for x in 0..in_shape.width {
            let b = x / strip;
            for ch in 0..c {
                gin[in_shape.index(y, x, ch)] += g[(b * c + ch) * in_shape.height + y] * inv;
            }
        }
    }
    gin
}
