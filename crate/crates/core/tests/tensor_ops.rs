use mprvit::tensor::ops::{
    bicubic_resize, bilinear_resize_forward, conv2d_forward, conv_transpose2d_forward, matmul,
    softmax_rows, Activation,
};
use mprvit::tensor::{grad_check, Tape, Tensor};
use mprvit::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{differentiable_ops, norm_only, probe};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand64(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
}

fn t32(shape: &[usize], data: &[f32]) -> Tensor<f32> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

/// Triple-loop matrix product.
fn matmul_oracle(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for l in 0..k {
                c[i * n + j] += a[i * k + l] * b[l * n + j];
            }
        }
    }
    c
}

/// Direct sliding-window cross-correlation with zero padding.
fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let (b, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = Tensor::zeros(&[b, cout, ho, wo]);
    for bi in 0..b {
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data()
                                    [((bi * cin + ci) * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((co * cin + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                    out.data_mut()[((bi * cout + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    out
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

#[test]
fn matmul_fixtures() {
    let eye = t32(&[2, 2], &[1., 0., 0., 1.]);
    let b = t32(&[2, 2], &[5., 6., 7., 8.]);
    assert_eq!(matmul(&eye, &b).unwrap().data(), b.data());
    let a = t32(&[2, 2], &[1., 2., 3., 4.]);
    let oracle = matmul_oracle(&[1., 2., 3., 4.], &[5., 6., 7., 8.], 2, 2, 2);
    assert_eq!(oracle, vec![19., 22., 43., 50.]);
    assert_eq!(matmul(&a, &b).unwrap().data(), &[19., 22., 43., 50.]);
    let z = matmul(
        &Tensor::<f32>::zeros(&[3, 4]),
        &Tensor::<f32>::ones(&[4, 2]),
    )
    .unwrap();
    assert_eq!(z.shape(), &[3, 2]);
    assert!(z.data().iter().all(|&v| v == 0.0));
}

#[test]
fn matmul_random_matches_triple_loop() {
    let mut r = rng(11);
    for &(m, k, n) in &[(3, 5, 2), (7, 1, 9), (16, 33, 8)] {
        let a = rand64(&[m, k], &mut r);
        let b = rand64(&[k, n], &mut r);
        let c = matmul(&a, &b).unwrap();
        let o = matmul_oracle(a.data(), b.data(), m, k, n);
        for (x, y) in c.data().iter().zip(&o) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn matmul_shape_mismatch() {
    let a = Tensor::<f32>::zeros(&[2, 3]);
    assert!(matches!(matmul(&a, &a), Err(Error::Dimension(_))));
}

#[test]
fn conv2d_fixtures() {
    let x = Tensor::<f32>::ones(&[1, 1, 3, 3]);
    let w = Tensor::<f32>::ones(&[1, 1, 3, 3]);
    assert_eq!(conv2d_forward(&x, &w, None, 1, 0).unwrap().data(), &[9.0]);
    let padded = conv2d_forward(&x, &w, None, 1, 1).unwrap();
    let oracle = conv_oracle(&x.cast(), &w.cast(), 1, 1);
    assert_eq!(oracle.data(), &[4., 6., 4., 6., 9., 6., 4., 6., 4.]);
    assert_eq!(padded.data(), &[4., 6., 4., 6., 9., 6., 4., 6., 4.]);

    let mut r = rng(2);
    let x = rand64(&[2, 3, 5, 5], &mut r).cast::<f32>();
    let unit = Tensor::<f32>::ones(&[1, 1, 1, 1]);
    let x1 = Tensor::new(&[2, 1, 5, 5], x.data()[..50].to_vec()).unwrap();
    let bias = Tensor::<f32>::zeros(&[1]);
    assert_eq!(
        conv2d_forward(&x1, &unit, Some(&bias), 1, 0)
            .unwrap()
            .data(),
        x1.data()
    );
}

#[test]
fn conv2d_random_matches_sliding_window() {
    let mut r = rng(5);
    for &(cin, cout, h, w, k, s, p) in &[
        (2, 3, 6, 5, 3, 1, 1),
        (3, 2, 7, 7, 3, 2, 1),
        (1, 4, 9, 8, 7, 1, 3),
        (2, 2, 4, 4, 1, 2, 0),
        (3, 5, 30, 30, 3, 2, 1),
    ] {
        let x = rand64(&[2, cin, h, w], &mut r);
        let wt = rand64(&[cout, cin, k, k], &mut r);
        let got = conv2d_forward(&x, &wt, None, s, p).unwrap();
        let want = conv_oracle(&x, &wt, s, p);
        assert_eq!(got.shape(), want.shape());
        assert!(got.max_abs_diff(&want) < 1e-12);
    }
}

#[test]
fn ceil_mode_halving_with_pad_one() {
    let x = Tensor::<f32>::zeros(&[1, 1, 30, 30]);
    let w = Tensor::<f32>::zeros(&[1, 1, 3, 3]);
    let a = conv2d_forward(&x, &w, None, 2, 1).unwrap();
    assert_eq!(a.shape(), &[1, 1, 15, 15]);
    let b = conv2d_forward(&a, &w, None, 2, 1).unwrap();
    assert_eq!(b.shape(), &[1, 1, 8, 8]);
}

#[test]
fn conv2d_output_below_one_is_dimension_error() {
    let x = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
    let w = Tensor::<f32>::zeros(&[1, 1, 7, 7]);
    assert!(matches!(
        conv2d_forward(&x, &w, None, 1, 0),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn conv_transpose_scatter_fixture() {
    let x = Tensor::<f32>::full(&[1, 1, 2, 2], 3.0);
    let w = Tensor::<f32>::ones(&[1, 1, 1, 1]);
    let y = conv_transpose2d_forward(&x, &w, None, 2, 0, 1).unwrap();
    assert_eq!(y.shape(), &[1, 1, 4, 4]);
    // Scatter oracle: value lands at (2i, 2j).
    let mut want = [0.0f32; 16];
    for i in 0..2 {
        for j in 0..2 {
            want[(2 * i) * 4 + 2 * j] = 3.0;
        }
    }
    assert_eq!(y.data(), &want);

    let zero = conv_transpose2d_forward(
        &Tensor::<f32>::zeros(&[1, 2, 3, 3]),
        &Tensor::ones(&[2, 1, 3, 3]),
        Some(&Tensor::zeros(&[1])),
        2,
        1,
        1,
    )
    .unwrap();
    assert!(zero.data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    let mut r = rng(9);
    for &(cin, cout, h, k, s, p, op) in &[
        (1, 1, 4, 3, 1, 1, 0),
        (2, 3, 8, 3, 2, 1, 1),
        (3, 2, 7, 3, 2, 1, 0),
        (2, 2, 6, 1, 2, 0, 1),
        (1, 2, 9, 7, 1, 3, 0),
    ] {
        let x = rand64(&[1, cin, h, h], &mut r);
        let w = rand64(&[cout, cin, k, k], &mut r);
        let y_shape = conv2d_forward(&x, &w, None, s, p).unwrap().shape().to_vec();
        let y = rand64(&y_shape, &mut r);
        let lhs = dot(&conv2d_forward(&x, &w, None, s, p).unwrap(), &y);
        let back = conv_transpose2d_forward(&y, &w, None, s, p, op).unwrap();
        assert_eq!(back.shape(), x.shape());
        let rhs = dot(&x, &back);
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }
    // 32-bit, the 1×1×4×4 case at the stated tolerance.
    let x = rand64(&[1, 1, 4, 4], &mut r).cast::<f32>();
    let w = rand64(&[1, 1, 3, 3], &mut r).cast::<f32>();
    let y = rand64(&[1, 1, 4, 4], &mut r).cast::<f32>();
    let lhs: f32 = conv2d_forward(&x, &w, None, 1, 1)
        .unwrap()
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| a * b)
        .sum();
    let rhs: f32 = conv_transpose2d_forward(&y, &w, None, 1, 1, 0)
        .unwrap()
        .data()
        .iter()
        .zip(x.data())
        .map(|(a, b)| a * b)
        .sum();
    assert!((lhs - rhs).abs() < 1e-5);
}

#[test]
fn conv_transpose_doubles_extent() {
    let x = Tensor::<f32>::zeros(&[1, 4, 8, 8]);
    let w = Tensor::<f32>::zeros(&[4, 2, 3, 3]);
    let y = conv_transpose2d_forward(&x, &w, None, 2, 1, 1).unwrap();
    assert_eq!(y.shape(), &[1, 2, 16, 16]);
    assert!(matches!(
        conv_transpose2d_forward(&x, &w, None, 2, 1, 2),
        Err(Error::Dimension(_))
    ));
    assert!(matches!(
        conv_transpose2d_forward(&x, &Tensor::zeros(&[3, 2, 3, 3]), None, 2, 1, 1),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn instance_norm_fixtures() {
    let tape = Tape::<f64>::new();
    let constant = tape.constant(Tensor::full(&[1, 1, 2, 2], 4.2));
    let y = norm_only(constant).unwrap().value();
    assert!(y.data().iter().all(|&v| v == 0.0));

    let pair = tape.constant(Tensor::new(&[1, 1, 1, 2], vec![-1.0, 1.0]).unwrap());
    let y = norm_only(pair).unwrap().value();
    let e = 1.0 / (1.0f64 + 1e-5).sqrt();
    assert!((y.data()[0] + e).abs() < 1e-15 && (y.data()[1] - e).abs() < 1e-15);

    let mut r = rng(4);
    let x = tape.constant(rand64(&[2, 3, 5, 6], &mut r).map(|v| 3.0 * v + 1.0));
    let y = norm_only(x).unwrap().value();
    for plane in y.data().chunks(30) {
        let mean = plane.iter().sum::<f64>() / 30.0;
        let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 30.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-3);
    }
}

#[test]
fn activation_fixtures() {
    let tape = Tape::<f32>::new();
    let x = tape.constant(t32(&[3], &[-1., 0., 2.]));
    assert_eq!(x.activation(Activation::Relu).value().data(), &[0., 0., 2.]);
    let z = tape.constant(t32(&[3], &[0., 20., -20.]));
    let t = z.activation(Activation::Tanh).value();
    assert_eq!(t.data()[0], 0.0);
    assert!((t.data()[1] - 1.0).abs() <= 1e-6 && (t.data()[2] + 1.0).abs() <= 1e-6);
    assert!(t.all_finite());
}

#[test]
fn softmax_fixtures() {
    let u = softmax_rows(&t32(&[1, 4], &[0.7; 4])).unwrap();
    assert!(u.data().iter().all(|&p| (p - 0.25).abs() < 1e-7));
    let two = softmax_rows(&Tensor::<f64>::new(&[1, 2], vec![0.0, 2f64.ln()]).unwrap()).unwrap();
    assert!((two.data()[0] - 1.0 / 3.0).abs() < 1e-15 && (two.data()[1] - 2.0 / 3.0).abs() < 1e-15);
    let big = softmax_rows(&t32(&[1, 2], &[1000., 1000.])).unwrap();
    assert_eq!(big.data(), &[0.5, 0.5]);
}

#[test]
fn bilinear_fixtures() {
    let c = Tensor::<f32>::full(&[1, 2, 5, 7], 0.3);
    let y = bilinear_resize_forward(&c, 11, 3).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.3));
    let ramp = t32(&[1, 1, 1, 2], &[0.0, 1.0]);
    assert_eq!(
        bilinear_resize_forward(&ramp, 1, 3).unwrap().data(),
        &[0.0, 0.5, 1.0]
    );
    let mut r = rng(8);
    let x = rand64(&[1, 1, 32, 32], &mut r);
    let y = bilinear_resize_forward(&x, 30, 30).unwrap();
    assert_eq!(y.shape(), &[1, 1, 30, 30]);
    assert!(y.max_value() <= x.max_value() && y.min_value() >= x.min_value());
    // Reference resampler: explicit per-pixel corner-aligned weights.
    for oy in [0usize, 7, 29] {
        for ox in [0usize, 13, 29] {
            let sy = oy as f64 * 31.0 / 29.0;
            let sx = ox as f64 * 31.0 / 29.0;
            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(31), (x0 + 1).min(31));
            let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
            let at = |i: usize, j: usize| x.data()[i * 32 + j];
            let want = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1))
                + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1));
            assert!((y.data()[oy * 30 + ox] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn bicubic_fixtures() {
    let c = Tensor::<f32>::full(&[1, 1, 9, 12], -0.7);
    assert!(bicubic_resize(&c, 5, 6)
        .unwrap()
        .data()
        .iter()
        .all(|&v| v == -0.7));
    let ramp = Tensor::<f64>::from_fn(&[1, 1, 10, 10], |i| {
        0.5 * (i / 10) as f64 - 0.25 * (i % 10) as f64 + 1.0
    });
    let y = bicubic_resize(&ramp, 5, 5).unwrap();
    for oy in 0..5 {
        for ox in 0..5 {
            let sy = oy as f64 * 9.0 / 4.0;
            let sx = ox as f64 * 9.0 / 4.0;
            let want = 0.5 * sy - 0.25 * sx + 1.0;
            assert!((y.data()[oy * 5 + ox] - want).abs() < 1e-12);
        }
    }
    let big = Tensor::<f32>::zeros(&[1, 1, 240, 240]);
    assert_eq!(
        bicubic_resize(&big, 120, 120).unwrap().shape(),
        &[1, 1, 120, 120]
    );
}

#[test]
fn backward_fixtures() {
    let tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
    tape.backward(x.sum()).unwrap();
    assert_eq!(x.grad().unwrap().data(), &[1.0, 1.0]);

    let tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
    let loss = x.square().sum();
    tape.backward(loss).unwrap();
    assert_eq!(x.grad().unwrap().data(), &[2.0, 4.0]);

    let tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::zeros(&[3]));
    assert!(matches!(tape.backward(x.relu()), Err(Error::Contract(_))));
}

#[test]
fn backward_visits_each_op_once() {
    let tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap());
    let a = x.square();
    let b = a.add(x).unwrap();
    let dead = x.tanh();
    let loss = b.mul(a).unwrap().sum();
    let visited = tape.backward(loss).unwrap();
    // square, add, mul, sum; the unused tanh branch is not reached.
    assert_eq!(visited, 4);
    assert!(dead.grad().is_none());
    // d/dx (x² + x)·x² = 4x³ + 3x²
    let g = x.grad().unwrap();
    for (gv, xv) in g.data().iter().zip([0.5f64, -1.0, 2.0]) {
        assert!((gv - (4.0 * xv.powi(3) + 3.0 * xv * xv)).abs() < 1e-12);
    }
}

#[test]
fn composite_conv_norm_relu_matches_finite_differences() {
    let mut r = rng(21);
    let w = rand64(&[3, 2, 3, 3], &mut r);
    let x = rand64(&[2, 2, 5, 5], &mut r);
    let err = grad_check(
        |x| {
            let t = x.tape();
            let wv = t.constant(w.clone());
            let g = t.constant(Tensor::full(&[3], 1.3));
            let b = t.constant(Tensor::full(&[3], 0.2));
            Ok(x.conv2d(wv, None, 1, 1)?
                .instance_norm(g, b, 1e-5)?
                .relu()
                .sum())
        },
        &x,
        1e-6,
    )
    .unwrap();
    assert!(err <= 1e-3, "rel err {err}");
}

#[test]
fn grad_check_fixtures() {
    let mut r = rng(31);
    let x = rand64(&[4, 3], &mut r);
    assert!(grad_check(|x| Ok(x.sum()), &x, 1e-3).unwrap() <= 1e-9);
    assert!(grad_check(|x| Ok(x.tanh().sum()), &x, 1e-4).unwrap() <= 1e-5);
    let plane = rand64(&[1, 1, 4, 4], &mut r);
    let err = grad_check(
        |x| {
            let t = x.tape();
            let w = t.constant(Tensor::from_fn(&[1, 1, 4, 4], |i| (i as f64 * 0.37).sin()));
            norm_only(x)?.mul(w).map(|v| v.sum())
        },
        &plane,
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-3, "instance norm rel err {err}");
    assert!(grad_check(|x| Ok(x.sum()), &x, 0.0).is_err());
}

#[test]
fn every_differentiable_op_passes_grad_check() {
    let ops = differentiable_ops();
    let mut r = rng(77);
    for (name, op, shapes) in ops {
        for (i, shape) in shapes.iter().enumerate() {
            let x = rand64(shape, &mut r);
            let err = grad_check(|x| probe(op(x)?, 1000 + i as u64), &x, 1e-6).unwrap();
            assert!(err <= 1e-3, "{name} {shape:?}: rel err {err}");
        }
    }
}

#[test]
fn forward_passes_are_bitwise_deterministic() {
    let mut r = rng(3);
    let x = rand64(&[2, 3, 9, 9], &mut r).cast::<f32>();
    let w = rand64(&[4, 3, 3, 3], &mut r).cast::<f32>();
    let run = || {
        let tape = Tape::<f32>::new();
        let xv = tape.leaf(x.clone());
        let wv = tape.leaf(w.clone());
        let y = xv
            .conv2d(wv, None, 2, 1)
            .unwrap()
            .tanh()
            .bilinear_resize(7, 6)
            .unwrap();
        let out = y.value();
        tape.backward(y.sum()).unwrap();
        ((*out).clone(), wv.grad().unwrap())
    };
    assert!(run() == run());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_shift(row in prop::collection::vec(-30.0f64..30.0, 1..12), shift in -100.0f64..100.0) {
        let n = row.len();
        let x = Tensor::new(&[1, n], row.clone()).unwrap();
        let shifted = Tensor::new(&[1, n], row.iter().map(|v| v + shift).collect()).unwrap();
        let a = softmax_rows(&x).unwrap();
        let b = softmax_rows(&shifted).unwrap();
        prop_assert!((a.sum() - 1.0).abs() <= 1e-6);
        prop_assert!(a.max_abs_diff(&b) <= 1e-6);
    }

    #[test]
    fn resizes_preserve_constants_exactly(c in -5.0f32..5.0, h in 2usize..10, w in 2usize..10, oh in 1usize..12, ow in 1usize..12) {
        let x = Tensor::<f32>::full(&[1, 1, h, w], c);
        prop_assert!(bilinear_resize_forward(&x, oh, ow).unwrap().data().iter().all(|&v| v == c));
        prop_assert!(bicubic_resize(&x, oh, ow).unwrap().data().iter().all(|&v| v == c));
    }
}
