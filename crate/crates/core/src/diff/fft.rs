//! Iterative radix-2 Cooley-Tukey FFT and its tape primitives.
//!
//! Forward transforms are unnormalized; the inverse carries `1/N`.

use num_complex::Complex64;

use super::{DiffError, Op, Var};
use crate::grid::{Grid, Shape};

pub fn is_power_of_two(n: usize) -> bool {
    n != 0 && n & (n - 1) == 0
}

/// In-place DFT of a power-of-two length buffer. `inverse` flips the sign of
/// the exponent; no normalization is applied in either direction.
pub fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    assert!(is_power_of_two(n), "fft length {n} is not a power of two");
    if n == 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = sign * 2.0 * std::f64::consts::PI / len as f64;
        // twiddles computed directly per index to avoid accumulated drift
        let twiddles: Vec<Complex64> =
            (0..half).map(|k| Complex64::from_polar(1.0, step * k as f64)).collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = buf[start + k];
                let b = buf[start + k + half] * twiddles[k];
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len *= 2;
    }
}

/// Direct O(n²) DFT, kept as a reference implementation.
pub fn dft_naive(input: &[Complex64], inverse: bool) -> Vec<Complex64> {
    let n = input.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    (0..n)
        .map(|k| {
            input
                .iter()
                .enumerate()
                .map(|(j, v)| {
                    let phase = sign * 2.0 * std::f64::consts::PI * ((j * k) % n) as f64 / n as f64;
                    v * Complex64::from_polar(1.0, phase)
                })
                .sum()
        })
        .collect()
}

fn to_complex(data: &[f64]) -> Vec<Complex64> {
    data.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect()
}

fn from_complex(data: &[Complex64]) -> Vec<f64> {
    data.iter().flat_map(|c| [c.re, c.im]).collect()
}

/// Unnormalized 2D transform of an interleaved complex buffer.
fn transform2(shape: Shape, data: &[f64], inverse: bool) -> Vec<f64> {
    let (h, w) = (shape.height, shape.width);
    let mut buf = to_complex(data);
    for row in buf.chunks_exact_mut(w) {
        fft_in_place(row, inverse);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        fft_in_place(&mut col, inverse);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
    from_complex(&buf)
}

fn check_complex(shape: Shape, primitive: &'static str, rows_only: bool) -> Result<(), DiffError> {
    if shape.channels != 2 {
        return Err(DiffError::Shape { primitive, detail: format!("expected a complex grid, got {shape}") });
    }
    if !is_power_of_two(shape.width) || !(rows_only || is_power_of_two(shape.height)) {
        return Err(DiffError::Shape { primitive, detail: format!("size {shape} is not a power of two") });
    }
    Ok(())
}

pub(super) fn fft2_op<'t>(v: Var<'t>, inverse: bool) -> Result<Var<'t>, DiffError> {
    let name = if inverse { "ifft2" } else { "fft2" };
    check_complex(v.shape(), name, false)?;
    let value = v.tape.with_value(v.id, |g| {
        let s = g.shape();
        let mut out = transform2(s, g.data(), inverse);
        if inverse {
            let scale = 1.0 / s.pixels() as f64;
            out.iter_mut().for_each(|x| *x *= scale);
        }
        Grid::new(s, out)
    });
    Ok(v.tape.push(value, Op::Fft2 { a: v.id, inverse }))
}

/// The adjoint of the unnormalized forward transform is the unnormalized
/// conjugate transform, and vice versa.
pub(super) fn fft2_backward(shape: Shape, g: &[f64], inverse: bool) -> Vec<f64> {
    let mut out = transform2(shape, g, !inverse);
    if inverse {
        let scale = 1.0 / shape.pixels() as f64;
        out.iter_mut().for_each(|x| *x *= scale);
    }
    out
}

fn transform_rows(shape: Shape, data: &[f64], inverse: bool) -> Vec<f64> {
    let mut buf = to_complex(data);
    for row in buf.chunks_exact_mut(shape.width) {
        fft_in_place(row, inverse);
    }
    from_complex(&buf)
}

pub(super) fn fft_rows_op<'t>(v: Var<'t>) -> Result<Var<'t>, DiffError> {
    check_complex(v.shape(), "fft_rows", true)?;
    let value = v.tape.with_value(v.id, |g| {
        let s = g.shape();
        Grid::new(s, transform_rows(s, g.data(), false))
    });
    Ok(v.tape.push(value, Op::FftRows { a: v.id }))
}

pub(super) fn fft_rows_backward(shape: Shape, g: &[f64]) -> Vec<f64> {
    transform_rows(shape, g, true)
}
