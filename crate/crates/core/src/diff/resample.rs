//! Scaled resampling of constant toroidal maps.
//!
//! Catmull-Rom interpolation is C1, so the output is continuously
//! differentiable in the scale factor, and it reproduces the map exactly at
//! integer sample positions.

use std::sync::Arc;

use super::{Op, Tape, Var};
use crate::grid::{Grid, Shape};

/// Catmull-Rom weights and their derivatives at fractional offset `t`.
pub fn catmull_rom_weights(t: f64) -> ([f64; 4], [f64; 4]) {
    let t2 = t * t;
    let t3 = t2 * t;
    (
        [
            0.5 * (-t3 + 2.0 * t2 - t),
            0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
            0.5 * (-3.0 * t3 + 4.0 * t2 + t),
            0.5 * (t3 - t2),
        ],
        [
            0.5 * (-3.0 * t2 + 4.0 * t - 1.0),
            0.5 * (9.0 * t2 - 10.0 * t),
            0.5 * (-9.0 * t2 + 8.0 * t + 1.0),
            0.5 * (3.0 * t2 - 2.0 * t),
        ],
    )
}

fn taps(pos: f64, n: usize) -> ([usize; 4], f64) {
    let base = pos.floor();
    let t = pos - base;
    let b = base as i64;
    let n = n as i64;
    let idx = [
        (b - 1).rem_euclid(n) as usize,
        b.rem_euclid(n) as usize,
        (b + 1).rem_euclid(n) as usize,
        (b + 2).rem_euclid(n) as usize,
    ];
    (idx, t)
}

pub(super) fn resample_op<'t>(tape: &'t Tape, map: &Arc<Grid>, scale: Var<'t>, out: Shape) -> Var<'t> {
    let s = scale.item();
    let ms = map.shape();
    assert_eq!(out.channels, ms.channels, "resample channel mismatch");
    let c = ms.channels;
    let mut value = vec![0.0; out.len()];
    let mut dscale = vec![0.0; out.len()];
    let mut acc = vec![0.0; c];
    let mut dacc_x = vec![0.0; c];
    let mut dacc_y = vec![0.0; c];
    for y in 0..out.height {
        let (iy, ty) = taps(y as f64 * s, ms.height);
        let (wy, dwy) = catmull_rom_weights(ty);
        for x in 0..out.width {
            let (ix, tx) = taps(x as f64 * s, ms.width);
            let (wx, dwx) = catmull_rom_weights(tx);
            acc.iter_mut().for_each(|v| *v = 0.0);
            dacc_x.iter_mut().for_each(|v| *v = 0.0);
            dacc_y.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..4 {
                if wy[j] == 0.0 && dwy[j] == 0.0 {
                    continue;
                }
                for i in 0..4 {
                    let base = (iy[j] * ms.width + ix[i]) * c;
                    let px = &map.data()[base..base + c];
                    let w = wy[j] * wx[i];
                    let wdx = wy[j] * dwx[i];
                    let wdy = dwy[j] * wx[i];
                    for ch in 0..c {
                        acc[ch] += w * px[ch];
                        dacc_x[ch] += wdx * px[ch];
                        dacc_y[ch] += wdy * px[ch];
                    }
                }
            }
            let o = (y * out.width + x) * c;
            for ch in 0..c {
                value[o + ch] = acc[ch];
                // d(pos_x)/ds = x, d(pos_y)/ds = y
                dscale[o + ch] = dacc_x[ch] * x as f64 + dacc_y[ch] * y as f64;
            }
        }
    }
    tape.push(Grid::new(out, value), Op::Resample { scale: scale.id, dscale })
}
