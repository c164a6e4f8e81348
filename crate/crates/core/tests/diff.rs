use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use matinfer_core::diff::*;
use matinfer_core::{Grid, Shape};

fn random_grid(rng: &mut ChaCha8Rng, shape: Shape) -> Grid {
    Grid::new(shape, (0..shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Central-difference gradient of `f` at `x`.
fn finite_difference(x: &Grid, h: f64, f: impl Fn(&Grid) -> f64) -> Grid {
    let mut out = Grid::zeros(x.shape());
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let mut xm = x.clone();
        xm.data_mut()[i] -= h;
        out.data_mut()[i] = (f(&xp) - f(&xm)) / (2.0 * h);
    }
    out
}

fn relative_error(a: &Grid, b: &Grid) -> f64 {
    let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.data().iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    diff / scale
}

/// Check the tape gradient of a single-input program against finite differences.
fn check_program<F>(x: &Grid, tol: f64, program: F)
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Var<'t>,
{
    let (_, g) = grad(std::slice::from_ref(x), |t, v| program(t, v[0])).unwrap();
    let fd = finite_difference(x, 1e-5, |xx| {
        let tape = Tape::new();
        let v = tape.input(xx.clone());
        program(&tape, v).item()
    });
    let err = relative_error(&g[0], &fd);
    assert!(err < tol, "relative gradient error {err:.3e} exceeds {tol:.0e}");
}

#[test]
fn square_at_three() {
    let (v, g) = grad(&[Grid::scalar(3.0)], |_, x| x[0].square()).unwrap();
    assert_eq!(v, 9.0);
    assert_eq!(g[0].item(), 6.0);
}

#[test]
fn constant_program_has_zero_gradient() {
    let (v, g) = grad(&[Grid::scalar(3.0), Grid::filled(Shape::new(2, 2, 1), 1.0)], |t, _| t.scalar(5.0)).unwrap();
    assert_eq!(v, 5.0);
    assert_eq!(g[0].item(), 0.0);
    assert!(g[1].data().iter().all(|&x| x == 0.0));
}

#[test]
fn unused_input_gets_exact_zero() {
    let (_, g) = grad(&[Grid::scalar(2.0), Grid::scalar(7.0)], |_, x| x[0] * x[0]).unwrap();
    assert_eq!(g[1].item(), 0.0);
}

#[test]
fn non_finite_is_reported_with_primitive_name() {
    let err = grad(&[Grid::scalar(-1.0)], |_, x| x[0].ln()).unwrap_err();
    assert!(matches!(err, DiffError::NonFinite { primitive: "ln", .. }), "{err}");
}

#[test]
fn non_scalar_output_is_rejected() {
    let err = grad(&[Grid::zeros(Shape::new(2, 2, 1))], |_, x| x[0].exp()).unwrap_err();
    assert!(matches!(err, DiffError::NonScalarOutput(_)));
}

#[test]
fn elementwise_primitives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = Shape::new(3, 4, 2);
    let x = random_grid(&mut rng, s);
    let pos = x.map(|v| v.abs() + 0.5);
    let w = Arc::new(random_grid(&mut rng, s));
    macro_rules! check {
        ($x:expr, |$v:ident| $body:expr) => {
            check_program(&$x, 1e-4, |t, $v| {
                let wv = t.constant((*w).clone());
                ($body * wv).sum()
            })
        };
    }
    check!(x, |v| v.exp());
    check!(pos, |v| v.ln());
    check!(pos, |v| v.sqrt());
    check!(x, |v| v.sin());
    check!(x, |v| v.cos());
    check!(x, |v| v.sigmoid());
    check!(x, |v| v.tanh());
    check!(x, |v| v.square());
    check!(pos, |v| v.recip());
    check!(pos, |v| v.powf(1.7));
    check!(x, |v| v.relu());
    check!(x, |v| v.abs());
    check!(x, |v| -v * 2.0 + 1.0);
    check!(x, |v| v * v / (v.square() + 1.0) - v);
    check!(x, |v| v.roll(1, -2));
    check!(x, |v| Var::concat_channels(&[v.channel(1), v.channel(0)]));
}

#[test]
fn broadcasting_and_reductions_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_grid(&mut rng, Shape::new(4, 4, 3));
    check_program(&x, 1e-4, |t, v| {
        let per_channel = v.mean_pixels();
        let scale = t.constant(Grid::from_vec(vec![1.0, -2.0, 0.5]));
        let centered = v - per_channel;
        (centered.square() * scale).sum() + v.sum_channels().mean() + v.normalize().channel(2).sum()
    });
    let s = random_grid(&mut rng, Shape::SCALAR);
    check_program(&s, 1e-4, |t, v| {
        let map = t.constant(Grid::from_fn(Shape::new(3, 3, 1), |y, x, _| (y * 3 + x) as f64));
        (map * v.exp() + v).square().sum()
    });
}

#[test]
fn replay_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_grid(&mut rng, Shape::new(8, 8, 2));
    let tape = Tape::new();
    let v = tape.input(x);
    let out = v.fft2().unwrap().square().sum().sqrt();
    let a = tape.backward(out).unwrap().wrt(v);
    let b = tape.backward(out).unwrap().wrt(v);
    assert_eq!(a.data(), b.data());
}

fn complex_grid(g: &Grid) -> Vec<Complex64> {
    g.data().chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect()
}

/// Brute-force 2D DFT by direct summation over both axes.
fn brute_dft2(g: &Grid) -> Vec<Complex64> {
    let s = g.shape();
    let (h, w) = (s.height, s.width);
    let input = complex_grid(g);
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for ky in 0..h {
        for kx in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let phase = -2.0
                        * std::f64::consts::PI
                        * ((ky * y) as f64 / h as f64 + (kx * x) as f64 / w as f64);
                    acc += input[y * w + x] * Complex64::from_polar(1.0, phase);
                }
            }
            out[ky * w + kx] = acc;
        }
    }
    out
}

#[test]
fn fft2_of_constant_is_dc_only() {
    let g = Grid::complex(&Grid::filled(Shape::new(4, 8, 1), 2.5), &Grid::zeros(Shape::new(4, 8, 1)));
    let tape = Tape::new();
    let out = tape.input(g).fft2().unwrap().value();
    assert_eq!(out.get(0, 0, 0), 2.5 * 32.0);
    for y in 0..4 {
        for x in 0..8 {
            if (y, x) != (0, 0) {
                assert!(out.get(y, x, 0).abs() < 1e-12 && out.get(y, x, 1).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn fft2_of_impulse_is_all_ones() {
    let mut g = Grid::zeros(Shape::new(8, 8, 2));
    g.set(0, 0, 0, 1.0);
    let tape = Tape::new();
    let out = tape.input(g).fft2().unwrap().value();
    for px in out.data().chunks_exact(2) {
        assert_eq!(px, [1.0, 0.0]);
    }
}

#[test]
fn fft2_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for shape in [Shape::new(8, 8, 2), Shape::new(4, 16, 2), Shape::new(32, 32, 2)] {
        let g = random_grid(&mut rng, shape);
        let tape = Tape::new();
        let fast = complex_grid(&tape.input(g.clone()).fft2().unwrap().value());
        let slow = brute_dft2(&g);
        let err = fast.iter().zip(&slow).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{shape}: max abs error {err}");
    }
}

#[test]
fn ifft2_inverts_fft2() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = random_grid(&mut rng, Shape::new(16, 8, 2));
    let tape = Tape::new();
    let back = tape.input(g.clone()).fft2().unwrap().ifft2().unwrap().value();
    assert!(back.max_abs_diff(&g) < 1e-12);
}

#[test]
fn fft_rejects_non_power_of_two() {
    let tape = Tape::new();
    let v = tape.input(Grid::zeros(Shape::new(6, 8, 2)));
    assert!(matches!(v.fft2(), Err(DiffError::Shape { .. })));
    let r = tape.input(Grid::zeros(Shape::new(2, 12, 1)));
    assert!(r.fft1_batch().is_err());
}

#[test]
fn fft_linearity_and_parseval() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let s = Shape::new(16, 16, 2);
    let x = random_grid(&mut rng, s);
    let y = random_grid(&mut rng, s);
    let (a, b) = (1.7, -0.3);
    let tape = Tape::new();
    let (xv, yv) = (tape.input(x.clone()), tape.input(y));
    let lhs = (xv * a + yv * b).fft2().unwrap().value();
    let rhs = (xv.fft2().unwrap() * a + yv.fft2().unwrap() * b).value();
    let scale = rhs.data().iter().map(|v| v.abs()).fold(0.0, f64::max);
    assert!(lhs.max_abs_diff(&rhs) / scale < 1e-9);

    let energy: f64 = x.data().iter().map(|v| v * v).sum();
    let spectrum: f64 = xv.fft2().unwrap().value().data().iter().map(|v| v * v).sum();
    let parseval = spectrum / s.pixels() as f64;
    assert!(((energy - parseval) / energy).abs() < 1e-6);
}

#[test]
fn fft1_batch_constant_and_tone() {
    let n = 16;
    let tape = Tape::new();
    let rows = tape.input(Grid::filled(Shape::new(2, n, 1), 3.0));
    let out = rows.fft1_batch().unwrap().value();
    for r in 0..2 {
        assert_eq!(out.get(r, 0, 0), 3.0 * n as f64);
        for k in 1..n {
            assert!(out.get(r, k, 0).abs() < 1e-12 && out.get(r, k, 1).abs() < 1e-12);
        }
    }
    let k0 = 3;
    let tone = Grid::from_fn(Shape::new(1, n, 1), |_, x, _| {
        (2.0 * std::f64::consts::PI * (k0 * x) as f64 / n as f64).cos()
    });
    let out = tape.input(tone).fft1_batch().unwrap().value();
    for k in 0..n {
        let mag = out.get(0, k, 0).hypot(out.get(0, k, 1));
        if k == k0 || k == n - k0 {
            assert!((mag - n as f64 / 2.0).abs() < 1e-9);
        } else {
            assert!(mag < 1e-9, "bin {k} has magnitude {mag}");
        }
    }
}

#[test]
fn fft1_batch_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rows = random_grid(&mut rng, Shape::new(5, 64, 1));
    let tape = Tape::new();
    let out = tape.input(rows.clone()).fft1_batch().unwrap().value();
    for r in 0..5 {
        let input: Vec<Complex64> = (0..64).map(|x| Complex64::new(rows.get(r, x, 0), 0.0)).collect();
        let slow = dft_naive(&input, false);
        for (k, s) in slow.iter().enumerate() {
            let err = (Complex64::new(out.get(r, k, 0), out.get(r, k, 1)) - s).norm();
            assert!(err < 1e-6);
        }
    }
}

#[test]
fn fft_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_grid(&mut rng, Shape::new(8, 4, 2));
    let w = random_grid(&mut rng, Shape::new(8, 4, 2));
    check_program(&x, 1e-4, |t, v| (v.fft2().unwrap() * t.constant(w.clone())).sum());
    check_program(&x, 1e-4, |t, v| (v.ifft2().unwrap() * t.constant(w.clone())).sum());
    // magnitude composition, away from zero bins
    check_program(&x, 1e-3, |_, v| v.fft_rows().unwrap().norm_sqr().add_scalar(1e-12).sqrt().sum());
    let r = random_grid(&mut rng, Shape::new(3, 8, 1));
    check_program(&r, 1e-3, |_, v| v.fft1_batch().unwrap().norm_sqr().add_scalar(1e-12).sqrt().sum());
}

fn random_layer(rng: &mut ChaCha8Rng, out: usize, inp: usize, k: usize) -> Arc<Conv2dLayer> {
    let w = (0..out * inp * k * k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let b = (0..out).map(|_| rng.random_range(-0.1..0.1)).collect();
    Arc::new(Conv2dLayer::new(out, inp, k, w, b).unwrap())
}

/// Nested-loop cross-correlation with zero padding.
fn conv_oracle(input: &Grid, layer: &Conv2dLayer, stride: usize, pad: usize) -> Grid {
    let s = input.shape();
    let k = layer.kernel;
    let ho = (s.height + 2 * pad - k) / stride + 1;
    let wo = (s.width + 2 * pad - k) / stride + 1;
    Grid::from_fn(Shape::new(ho, wo, layer.out_channels), |oy, ox, o| {
        let mut acc = layer.bias[o];
        for i in 0..layer.in_channels {
            for ky in 0..k {
                for kx in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if iy >= 0 && ix >= 0 && (iy as usize) < s.height && (ix as usize) < s.width {
                        acc += layer.weight(o, i, ky, kx) * input.get(iy as usize, ix as usize, i);
                    }
                }
            }
        }
        acc
    })
}

#[test]
fn conv2d_identity_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random_grid(&mut rng, Shape::new(5, 6, 2));
    let layer = Arc::new(Conv2dLayer::new(2, 2, 1, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap());
    let tape = Tape::new();
    let out = tape.input(x.clone()).conv2d(&layer, 1, 0).unwrap().value();
    assert_eq!(out, x);
}

#[test]
fn conv2d_box_filter_on_constant() {
    let layer = Arc::new(Conv2dLayer::new(1, 1, 3, vec![1.0; 9], vec![0.0]).unwrap());
    let tape = Tape::new();
    let out = tape.input(Grid::filled(Shape::new(6, 6, 1), 0.7)).conv2d(&layer, 1, 1).unwrap().value();
    for y in 1..5 {
        for x in 1..5 {
            assert!((out.get(y, x, 0) - 9.0 * 0.7).abs() < 1e-12);
        }
    }
}

#[test]
fn conv2d_matches_nested_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let cases = [(Shape::new(5, 5, 1), 1, 3, 1, 1), (Shape::new(9, 7, 3), 4, 3, 2, 1), (Shape::new(64, 64, 2), 3, 5, 1, 2)];
    for (s, out, k, stride, pad) in cases {
        let x = random_grid(&mut rng, s);
        let layer = random_layer(&mut rng, out, s.channels, k);
        let tape = Tape::new();
        let fast = tape.input(x.clone()).conv2d(&layer, stride, pad).unwrap().value();
        let slow = conv_oracle(&x, &layer, stride, pad);
        assert!(fast.max_abs_diff(&slow) < 1e-6);
    }
}

#[test]
fn conv2d_shape_mismatch_is_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let layer = random_layer(&mut rng, 2, 3, 3);
    let tape = Tape::new();
    let v = tape.input(Grid::zeros(Shape::new(4, 4, 2)));
    assert!(v.conv2d(&layer, 1, 1).is_err());
    assert!(Conv2dLayer::new(1, 1, 2, vec![0.0; 4], vec![0.0]).is_err());
}

#[test]
fn conv_pool_gram_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random_grid(&mut rng, Shape::new(8, 8, 3));
    let l1 = random_layer(&mut rng, 4, 3, 3);
    let l2 = random_layer(&mut rng, 2, 4, 3);
    check_program(&x, 1e-4, |_, v| {
        let f = v.conv2d(&l1, 1, 1).unwrap();
        let g = f.avg_pool2().conv2d(&l2, 2, 1).unwrap();
        f.gram().sum() + g.square().sum()
    });
}

#[test]
fn gram_of_constant_maps() {
    let c = [0.5, -2.0, 3.0];
    let g = Grid::from_fn(Shape::new(4, 4, 3), |_, _, ch| c[ch]);
    let tape = Tape::new();
    let out = tape.input(g).gram().value();
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(out.data()[i * 3 + j], c[i] * c[j]);
        }
    }
}

#[test]
fn binned_reductions_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = random_grid(&mut rng, Shape::new(4, 8, 3));
    let assign = (0..32).map(|i| if i % 7 == 0 { None } else { Some(i % 3) }).collect();
    let bins = Arc::new(BinAssignment::new(4, 8, 3, assign));
    check_program(&x, 1e-4, |_, v| v.bin_mean(&bins).square().sum() + v.column_profiles(4).exp().sum());
}

#[test]
fn resample_is_exact_at_unit_scale_and_differentiable() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let map = Arc::new(random_grid(&mut rng, Shape::new(16, 16, 2)));
    let tape = Tape::new();
    let s = tape.scalar(1.0);
    let out = tape.resample(&map, s, map.shape()).value();
    assert_eq!(&out, map.as_ref());

    let w = random_grid(&mut rng, Shape::new(16, 16, 2));
    for s0 in [0.73, 1.3, 2.2] {
        check_program(&Grid::scalar(s0), 1e-5, |t, v| {
            (t.resample(&map, v, Shape::new(16, 16, 2)) * t.constant(w.clone())).sum()
        });
    }
}

#[test]
fn catmull_rom_weights_partition_unity() {
    for t in [0.0, 0.1, 0.5, 0.99] {
        let (w, dw) = catmull_rom_weights(t);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(dw.iter().sum::<f64>().abs() < 1e-12);
    }
}

mod props {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn fft_round_trip(seed in 0u64..1000, log_h in 0u32..5, log_w in 0u32..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_grid(&mut rng, Shape::new(1 << log_h, 1 << log_w, 2));
            let tape = Tape::new();
            let back = tape.input(g.clone()).fft2().unwrap().ifft2().unwrap().value();
            prop_assert!(back.max_abs_diff(&g) < 1e-12);
        }

        #[test]
        fn product_rule(a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let (_, g) = grad(&[Grid::scalar(a), Grid::scalar(b)], |_, x| (x[0] * x[1]).sin()).unwrap();
            prop_assert!((g[0].item() - b * (a * b).cos()).abs() < 1e-12);
            prop_assert!((g[1].item() - a * (a * b).cos()).abs() < 1e-12);
        }
    }
}
