use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

use super::{conv, fft, resample, BinaryKind, Node, Op, UnaryKind, Var};
use crate::diff::{BinAssignment, Conv2dLayer, DiffError, Tape};
use crate::grid::{Grid, Shape};

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b || b == 1 {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else {
        None
    }
}

fn broadcast_shape(a: Shape, b: Shape) -> Option<Shape> {
    Some(Shape::new(
        broadcast_dim(a.height, b.height)?,
        broadcast_dim(a.width, b.width)?,
        broadcast_dim(a.channels, b.channels)?,
    ))
}

/// Strides of `s` when read at the coordinates of a broadcast output.
fn strides(s: Shape) -> [usize; 3] {
    [
        if s.height == 1 { 0 } else { s.width * s.channels },
        if s.width == 1 { 0 } else { s.channels },
        if s.channels == 1 { 0 } else { 1 },
    ]
}

/// Visit every output element with the flat indices of both operands.
fn for_each_broadcast(out: Shape, a: Shape, b: Shape, mut f: impl FnMut(usize, usize, usize)) {
    if a == out && b == out {
        for i in 0..out.len() {
            f(i, i, i);
        }
        return;
    }
    if a == out && b.len() == 1 {
        for i in 0..out.len() {
            f(i, i, 0);
        }
        return;
    }
    if b == out && a.len() == 1 {
        for i in 0..out.len() {
            f(i, 0, i);
        }
        return;
    }
    let sa = strides(a);
    let sb = strides(b);
    let mut o = 0;
    for y in 0..out.height {
        for x in 0..out.width {
            let ba = y * sa[0] + x * sa[1];
            let bb = y * sb[0] + x * sb[1];
            for c in 0..out.channels {
                f(o, ba + c * sa[2], bb + c * sb[2]);
                o += 1;
            }
        }
    }
}

fn apply_unary(kind: UnaryKind, x: f64) -> f64 {
    match kind {
        UnaryKind::Neg => -x,
        UnaryKind::Exp => x.exp(),
        UnaryKind::Ln => x.ln(),
        UnaryKind::Sqrt => x.sqrt(),
        UnaryKind::Sin => x.sin(),
        UnaryKind::Cos => x.cos(),
        UnaryKind::Sigmoid => sigmoid(x),
        UnaryKind::Relu => {
            if x > 0.0 {
                x
            } else {
                0.0
            }
        }
        UnaryKind::Square => x * x,
        UnaryKind::Recip => 1.0 / x,
        UnaryKind::Tanh => x.tanh(),
        UnaryKind::Abs => x.abs(),
        UnaryKind::Powf(p) => x.powf(p),
        UnaryKind::AddConst(c) => x + c,
        UnaryKind::MulConst(c) => x * c,
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn unary_derivative(kind: UnaryKind, x: f64, y: f64) -> f64 {
    match kind {
        UnaryKind::Neg => -1.0,
        UnaryKind::Exp => y,
        UnaryKind::Ln => 1.0 / x,
        UnaryKind::Sqrt => 0.5 / y,
        UnaryKind::Sin => x.cos(),
        UnaryKind::Cos => -x.sin(),
        UnaryKind::Sigmoid => y * (1.0 - y),
        // subgradient 0 at the kink
        UnaryKind::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        UnaryKind::Square => 2.0 * x,
        UnaryKind::Recip => -y * y,
        UnaryKind::Tanh => 1.0 - y * y,
        UnaryKind::Abs => {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        UnaryKind::Powf(p) => p * x.powf(p - 1.0),
        UnaryKind::AddConst(_) => 1.0,
        UnaryKind::MulConst(c) => c,
    }
}

impl<'t> Var<'t> {
    fn binary(self, other: Var<'t>, kind: BinaryKind) -> Var<'t> {
        assert!(std::ptr::eq(self.tape, other.tape), "operands recorded on different tapes");
        let nodes = self.tape.nodes.borrow();
        let a = &nodes[self.id].value;
        let b = &nodes[other.id].value;
        let out_shape = broadcast_shape(a.shape(), b.shape()).unwrap_or_else(|| {
            panic!("cannot broadcast {} with {}", a.shape(), b.shape())
        });
        let mut out = vec![0.0; out_shape.len()];
        let (ad, bd) = (a.data(), b.data());
        match kind {
            BinaryKind::Add => for_each_broadcast(out_shape, a.shape(), b.shape(), |o, i, j| {
                out[o] = ad[i] + bd[j]
            }),
            BinaryKind::Sub => for_each_broadcast(out_shape, a.shape(), b.shape(), |o, i, j| {
                out[o] = ad[i] - bd[j]
            }),
            BinaryKind::Mul => for_each_broadcast(out_shape, a.shape(), b.shape(), |o, i, j| {
                out[o] = ad[i] * bd[j]
            }),
            BinaryKind::Div => for_each_broadcast(out_shape, a.shape(), b.shape(), |o, i, j| {
                out[o] = ad[i] / bd[j]
            }),
        }
        drop(nodes);
        self.tape.push(Grid::new(out_shape, out), Op::Binary { kind, a: self.id, b: other.id })
    }

    fn unary(self, kind: UnaryKind) -> Var<'t> {
        let value = self.tape.with_value(self.id, |g| g.map(|x| apply_unary(kind, x)));
        self.tape.push(value, Op::Unary { kind, a: self.id })
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(UnaryKind::Exp)
    }
    pub fn ln(self) -> Var<'t> {
        self.unary(UnaryKind::Ln)
    }
    pub fn sqrt(self) -> Var<'t> {
        self.unary(UnaryKind::Sqrt)
    }
    pub fn sin(self) -> Var<'t> {
        self.unary(UnaryKind::Sin)
    }
    pub fn cos(self) -> Var<'t> {
        self.unary(UnaryKind::Cos)
    }
    pub fn sigmoid(self) -> Var<'t> {
        self.unary(UnaryKind::Sigmoid)
    }
    pub fn relu(self) -> Var<'t> {
        self.unary(UnaryKind::Relu)
    }
    pub fn square(self) -> Var<'t> {
        self.unary(UnaryKind::Square)
    }
    pub fn recip(self) -> Var<'t> {
        self.unary(UnaryKind::Recip)
    }
    pub fn tanh(self) -> Var<'t> {
        self.unary(UnaryKind::Tanh)
    }
    pub fn abs(self) -> Var<'t> {
        self.unary(UnaryKind::Abs)
    }
    pub fn powf(self, p: f64) -> Var<'t> {
        self.unary(UnaryKind::Powf(p))
    }
    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.unary(UnaryKind::AddConst(c))
    }
    pub fn mul_scalar(self, c: f64) -> Var<'t> {
        self.unary(UnaryKind::MulConst(c))
    }

    /// `max(self, floor)` with subgradient 0 at the tie.
    pub fn max_scalar(self, floor: f64) -> Var<'t> {
        self.add_scalar(-floor).relu().add_scalar(floor)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(self) -> Var<'t> {
        let v = self.tape.with_value(self.id, |g| g.sum());
        self.tape.push(Grid::scalar(v), Op::Sum { a: self.id })
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.shape().len() as f64;
        self.sum().mul_scalar(1.0 / n)
    }

    /// Per-channel mean over all pixels, shape `1×1×C`.
    pub fn mean_pixels(self) -> Var<'t> {
        // summing sorted values makes the result independent of pixel order
        let value = self.tape.with_value(self.id, |g| {
            let s = g.shape();
            let n = s.pixels() as f64;
            let acc = (0..s.channels)
                .map(|c| {
                    let mut vals: Vec<f64> = g.data().iter().skip(c).step_by(s.channels).copied().collect();
                    vals.sort_unstable_by(f64::total_cmp);
                    vals.iter().sum::<f64>() / n
                })
                .collect();
            Grid::new(Shape::flat(s.channels), acc)
        });
        self.tape.push(value, Op::MeanPixels { a: self.id })
    }

    /// Sum across channels, shape `H×W×1`.
    pub fn sum_channels(self) -> Var<'t> {
        let value = self.tape.with_value(self.id, |g| {
            let s = g.shape();
            let data = g.data().chunks_exact(s.channels).map(|px| px.iter().sum()).collect();
            Grid::new(Shape::new(s.height, s.width, 1), data)
        });
        self.tape.push(value, Op::SumChannels { a: self.id })
    }

    /// Channels `start..start + len`.
    pub fn channels(self, start: usize, len: usize) -> Var<'t> {
        let value = self.tape.with_value(self.id, |g| {
            let s = g.shape();
            assert!(start + len <= s.channels, "channel range out of bounds for {s}");
            let mut data = Vec::with_capacity(s.pixels() * len);
            for px in g.data().chunks_exact(s.channels) {
                data.extend_from_slice(&px[start..start + len]);
            }
            Grid::new(Shape::new(s.height, s.width, len), data)
        });
        self.tape.push(value, Op::Channels { a: self.id, start })
    }

    pub fn channel(self, c: usize) -> Var<'t> {
        self.channels(c, 1)
    }

    /// Real part of a complex grid.
    pub fn re(self) -> Var<'t> {
        self.channel(0)
    }

    /// Imaginary part of a complex grid.
    pub fn im(self) -> Var<'t> {
        self.channel(1)
    }

    /// Squared magnitude of a complex grid.
    pub fn norm_sqr(self) -> Var<'t> {
        self.square().sum_channels()
    }

    pub fn reshape(self, shape: Shape) -> Var<'t> {
        let value = self.tape.with_value(self.id, |g| {
            assert_eq!(g.len(), shape.len(), "reshape {} -> {}", g.shape(), shape);
            Grid::new(shape, g.data().to_vec())
        });
        self.tape.push(value, Op::Reshape { a: self.id })
    }

    pub fn flatten(self) -> Var<'t> {
        let n = self.shape().len();
        self.reshape(Shape::flat(n))
    }

    /// Toroidal shift: `out[y][x] = in[y - dy][x - dx]`.
    pub fn roll(self, dy: isize, dx: isize) -> Var<'t> {
        let value = self.tape.with_value(self.id, |g| roll_grid(g, dy, dx));
        self.tape.push(value, Op::Roll { a: self.id, dy, dx })
    }

    /// Expand to `shape` by broadcasting.
    pub fn broadcast_to(self, shape: Shape) -> Var<'t> {
        let zero = self.tape.constant(Grid::zeros(shape));
        zero + self
    }

    /// Unnormalized forward 2D DFT of a complex grid.
    pub fn fft2(self) -> Result<Var<'t>, DiffError> {
        fft::fft2_op(self, false)
    }

    /// Inverse 2D DFT, normalized by `1/(H·W)`.
    pub fn ifft2(self) -> Result<Var<'t>, DiffError> {
        fft::fft2_op(self, true)
    }

    /// Unnormalized forward DFT of each row of a complex grid.
    pub fn fft_rows(self) -> Result<Var<'t>, DiffError> {
        fft::fft_rows_op(self)
    }

    /// Row-wise forward DFT of a real single-channel grid.
    pub fn fft1_batch(self) -> Result<Var<'t>, DiffError> {
        let s = self.shape();
        if s.channels != 1 {
            return Err(DiffError::Shape { primitive: "fft1_batch", detail: format!("expected a real grid, got {s}") });
        }
        let zero = self.tape.constant(Grid::zeros(s));
        Var::concat_channels(&[self, zero]).fft_rows()
    }

    /// Cross-correlation with a fixed kernel bank and zero padding.
    pub fn conv2d(self, layer: &Arc<Conv2dLayer>, stride: usize, pad: usize) -> Result<Var<'t>, DiffError> {
        conv::conv2d_op(self, layer, stride, pad)
    }

    pub fn avg_pool2(self) -> Var<'t> {
        conv::avg_pool2_op(self)
    }

    /// Flattened `C×C` matrix of `mean(F_i · F_j)` over pixels.
    pub fn gram(self) -> Var<'t> {
        conv::gram_op(self)
    }

    /// Per-bin channel means, shape `1×bins×C`.
    pub fn bin_mean(self, bins: &Arc<BinAssignment>) -> Var<'t> {
        conv::bin_mean_op(self, bins)
    }

    /// Column profiles of `k` vertical strips: row `b·C + c` holds, for each
    /// image row, the mean of channel `c` across strip `b`.
    pub fn column_profiles(self, k: usize) -> Var<'t> {
        conv::column_profiles_op(self, k)
    }

    pub fn concat_channels(parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty());
        let tape = parts[0].tape;
        let nodes = tape.nodes.borrow();
        let first = nodes[parts[0].id].value.shape();
        let total: usize = parts.iter().map(|p| nodes[p.id].value.shape().channels).sum();
        let shape = Shape::new(first.height, first.width, total);
        let mut data = Vec::with_capacity(shape.len());
        for px in 0..first.pixels() {
            for p in parts {
                let g = &nodes[p.id].value;
                let s = g.shape();
                assert_eq!((s.height, s.width), (first.height, first.width), "concat_channels shape mismatch");
                data.extend_from_slice(&g.data()[px * s.channels..(px + 1) * s.channels]);
            }
        }
        drop(nodes);
        tape.push(Grid::new(shape, data), Op::ConcatChannels { parts: parts.iter().map(|p| p.id).collect() })
    }

    pub fn concat_flat(parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty());
        let tape = parts[0].tape;
        let nodes = tape.nodes.borrow();
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(nodes[p.id].value.data());
        }
        drop(nodes);
        tape.push(Grid::from_vec(data), Op::ConcatFlat { parts: parts.iter().map(|p| p.id).collect() })
    }

    /// Elementwise product of two 3-channel grids summed over channels.
    pub fn dot3(self, other: Var<'t>) -> Var<'t> {
        (self * other).sum_channels()
    }

    /// Scale each pixel's vector to unit length.
    pub fn normalize(self) -> Var<'t> {
        let len = self.square().sum_channels().sqrt();
        self / len
    }
}

impl Tape {
    /// Sample a constant toroidal map at `(x·scale, y·scale)` with Catmull-Rom
    /// interpolation; differentiable in `scale`.
    pub fn resample<'t>(&'t self, map: &Arc<Grid>, scale: Var<'t>, out: Shape) -> Var<'t> {
        resample::resample_op(self, map, scale, out)
    }
}

pub(crate) fn roll_grid(g: &Grid, dy: isize, dx: isize) -> Grid {
    let s = g.shape();
    let (h, w) = (s.height as isize, s.width as isize);
    let mut out = Grid::zeros(s);
    let c = s.channels;
    for y in 0..s.height {
        let sy = (y as isize - dy).rem_euclid(h) as usize;
        for x in 0..s.width {
            let sx = (x as isize - dx).rem_euclid(w) as usize;
            let src = (sy * s.width + sx) * c;
            let dst = (y * s.width + x) * c;
            out.data_mut()[dst..dst + c].copy_from_slice(&g.data()[src..src + c]);
        }
    }
    out
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: usize, len: usize) -> &mut Vec<f64> {
    grads[id].get_or_insert_with(|| vec![0.0; len])
}

pub(super) fn backward_node(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    let out_shape = node.value.shape();
    match &node.op {
        Op::Leaf => {}
        Op::Binary { kind, a, b } => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            let (sa, sb) = (av.shape(), bv.shape());
            let (ad, bd) = (av.data(), bv.data());
            let mut ga = vec![0.0; sa.len()];
            let mut gb = vec![0.0; sb.len()];
            match kind {
                BinaryKind::Add => for_each_broadcast(out_shape, sa, sb, |o, i, j| {
                    ga[i] += g[o];
                    gb[j] += g[o];
                }),
                BinaryKind::Sub => for_each_broadcast(out_shape, sa, sb, |o, i, j| {
                    ga[i] += g[o];
                    gb[j] -= g[o];
                }),
                BinaryKind::Mul => for_each_broadcast(out_shape, sa, sb, |o, i, j| {
                    ga[i] += g[o] * bd[j];
                    gb[j] += g[o] * ad[i];
                }),
                BinaryKind::Div => for_each_broadcast(out_shape, sa, sb, |o, i, j| {
                    let inv = 1.0 / bd[j];
                    ga[i] += g[o] * inv;
                    gb[j] -= g[o] * ad[i] * inv * inv;
                }),
            }
            add_into(accumulate(grads, *a, sa.len()), &ga);
            add_into(accumulate(grads, *b, sb.len()), &gb);
        }
        Op::Unary { kind, a } => {
            let x = nodes[*a].value.data();
            let y = node.value.data();
            let ga = accumulate(grads, *a, x.len());
            for i in 0..x.len() {
                ga[i] += g[i] * unary_derivative(*kind, x[i], y[i]);
            }
        }
        Op::Sum { a } => {
            let n = nodes[*a].value.len();
            let ga = accumulate(grads, *a, n);
            ga.iter_mut().for_each(|v| *v += g[0]);
        }
        Op::MeanPixels { a } => {
            let s = nodes[*a].value.shape();
            let inv = 1.0 / s.pixels() as f64;
            let ga = accumulate(grads, *a, s.len());
            for px in ga.chunks_exact_mut(s.channels) {
                for (v, gc) in px.iter_mut().zip(g) {
                    *v += gc * inv;
                }
            }
        }
        Op::SumChannels { a } => {
            let s = nodes[*a].value.shape();
            let ga = accumulate(grads, *a, s.len());
            for (px, gp) in ga.chunks_exact_mut(s.channels).zip(g) {
                px.iter_mut().for_each(|v| *v += gp);
            }
        }
        Op::Channels { a, start } => {
            let s = nodes[*a].value.shape();
            let len = out_shape.channels;
            let ga = accumulate(grads, *a, s.len());
            for (px, gp) in ga.chunks_exact_mut(s.channels).zip(g.chunks_exact(len)) {
                for (v, gv) in px[*start..*start + len].iter_mut().zip(gp) {
                    *v += gv;
                }
            }
        }
        Op::ConcatChannels { parts } => {
            let total = out_shape.channels;
            let mut offset = 0;
            for p in parts {
                let s = nodes[*p].value.shape();
                let c = s.channels;
                let gp = accumulate(grads, *p, s.len());
                for (px, go) in gp.chunks_exact_mut(c).zip(g.chunks_exact(total)) {
                    for (v, gv) in px.iter_mut().zip(&go[offset..offset + c]) {
                        *v += gv;
                    }
                }
                offset += c;
            }
        }
        Op::ConcatFlat { parts } => {
            let mut offset = 0;
            for p in parts {
                let n = nodes[*p].value.len();
                add_into(accumulate(grads, *p, n), &g[offset..offset + n]);
                offset += n;
            }
        }
        Op::Reshape { a } => {
            add_into(accumulate(grads, *a, g.len()), g);
        }
        Op::Roll { a, dy, dx } => {
            let back = roll_grid(&Grid::new(out_shape, g.to_vec()), -dy, -dx);
            add_into(accumulate(grads, *a, g.len()), back.data());
        }
        Op::Fft2 { a, inverse } => {
            let back = fft::fft2_backward(out_shape, g, *inverse);
            add_into(accumulate(grads, *a, g.len()), &back);
        }
        Op::FftRows { a } => {
            let back = fft::fft_rows_backward(out_shape, g);
            add_into(accumulate(grads, *a, g.len()), &back);
        }
        Op::Conv2d { a, layer, stride, pad } => {
            let s = nodes[*a].value.shape();
            let back = conv::conv2d_backward(s, out_shape, layer, *stride, *pad, g);
            add_into(accumulate(grads, *a, s.len()), &back);
        }
        Op::AvgPool2 { a } => {
            let s = nodes[*a].value.shape();
            let back = conv::avg_pool2_backward(s, g);
            add_into(accumulate(grads, *a, s.len()), &back);
        }
        Op::Gram { a } => {
            let input = &nodes[*a].value;
            let back = conv::gram_backward(input, g);
            add_into(accumulate(grads, *a, input.len()), &back);
        }
        Op::BinMean { a, bins } => {
            let s = nodes[*a].value.shape();
            let back = conv::bin_mean_backward(s, bins, g);
            add_into(accumulate(grads, *a, s.len()), &back);
        }
        Op::ColumnProfiles { a, bins } => {
            let s = nodes[*a].value.shape();
            let back = conv::column_profiles_backward(s, *bins, g);
            add_into(accumulate(grads, *a, s.len()), &back);
        }
        Op::Resample { scale, dscale, .. } => {
            let total: f64 = g.iter().zip(dscale).map(|(a, b)| a * b).sum();
            accumulate(grads, *scale, 1)[0] += total;
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

macro_rules! impl_binary {
    ($trait:ident, $method:ident, $kind:expr, $scalar:expr) => {
        impl<'t> $trait<Var<'t>> for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                self.binary(rhs, $kind)
            }
        }
        impl<'t> $trait<f64> for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: f64) -> Var<'t> {
                $scalar(self, rhs)
            }
        }
        impl<'t> $trait<Var<'t>> for f64 {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                let lhs = rhs.tape.scalar(self);
                lhs.binary(rhs, $kind)
            }
        }
    };
}

impl_binary!(Add, add, BinaryKind::Add, |v: Var<'t>, c: f64| v.add_scalar(c));
impl_binary!(Sub, sub, BinaryKind::Sub, |v: Var<'t>, c: f64| v.add_scalar(-c));
impl_binary!(Mul, mul, BinaryKind::Mul, |v: Var<'t>, c: f64| v.mul_scalar(c));
impl_binary!(Div, div, BinaryKind::Div, |v: Var<'t>, c: f64| v.mul_scalar(1.0 / c));

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(UnaryKind::Neg)
    }
}
