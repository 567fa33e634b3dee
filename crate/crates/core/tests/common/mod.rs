//! Reference implementations shared by the integration tests. Each one is
//! written from the definition and shares no code with the crate.
#![allow(dead_code)]

use mprvit::data::Volume;
use mprvit::tensor::ops::concat_channels;
use mprvit::tensor::Tensor;
use mprvit::{Result, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Gamma at positive integers and half-integers, exactly from the recurrences.
pub fn gamma_half_integer(x: f64) -> f64 {
    if (x - 1.0).abs() < 1e-12 {
        1.0
    } else if (x - 0.5).abs() < 1e-12 {
        std::f64::consts::PI.sqrt()
    } else {
        (x - 1.0) * gamma_half_integer(x - 1.0)
    }
}

/// Two-sided p by Simpson integration of the t density over `[0, |t|]`.
pub fn t_pvalue_by_integration(t: f64, df: usize) -> f64 {
    let nu = df as f64;
    let c = gamma_half_integer((nu + 1.0) / 2.0)
        / ((nu * std::f64::consts::PI).sqrt() * gamma_half_integer(nu / 2.0));
    let pdf = |x: f64| c * (1.0 + x * x / nu).powf(-(nu + 1.0) / 2.0);
    let n = 200_000;
    let h = t.abs() / n as f64;
    let mut s = pdf(0.0) + pdf(t.abs());
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * pdf(i as f64 * h);
    }
    1.0 - 2.0 * s * h / 3.0
}

/// Windowed SSIM straight from the definition: 2-D Gaussian weights, one window at a time.
pub fn ssim_reference(x: &Volume, y: &Volume, c1: f64, c2: f64) -> f64 {
    let [nx, ny, nz] = x.extents();
    let k = 11usize;
    let mut w = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for z in 0..nz {
        for oy in 0..=ny - k {
            for ox in 0..=nx - k {
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let wt = w[i][j] / total;
                        mx += wt * x.get(ox + j, oy + i, z) as f64;
                        my += wt * y.get(ox + j, oy + i, z) as f64;
                    }
                }
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let wt = w[i][j] / total;
                        let a = x.get(ox + j, oy + i, z) as f64 - mx;
                        let b = y.get(ox + j, oy + i, z) as f64 - my;
                        vx += wt * a * a;
                        vy += wt * b * b;
                        cxy += wt * a * b;
                    }
                }
                sum += (2.0 * mx * my + c1) * (2.0 * cxy + c2)
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    sum / count as f64
}

/// Scalar loops in f64: exp of shifted scores, then a weighted row average.
pub fn attention_oracle(q: &Tensor<f64>, k: &Tensor<f64>, v: &Tensor<f64>) -> Vec<f64> {
    let (tq, d) = (q.shape()[0], q.shape()[1]);
    let tk = k.shape()[0];
    let mut out = vec![0.0; tq * d];
    for i in 0..tq {
        let s: Vec<f64> = (0..tk)
            .map(|j| {
                (0..d)
                    .map(|c| q.data()[i * d + c] * k.data()[j * d + c])
                    .sum::<f64>()
                    / (d as f64).sqrt()
            })
            .collect();
        let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
        let z: f64 = w.iter().sum();
        for c in 0..d {
            out[i * d + c] = (0..tk).map(|j| w[j] * v.data()[j * d + c]).sum::<f64>() / z;
        }
    }
    out
}

/// Weighted sum with fixed pseudo-random weights so every output element matters.
pub fn probe<'t>(y: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let w = y
        .tape()
        .constant(Tensor::from_fn(&y.shape(), |_| r.gen_range(-1.0..1.0)));
    Ok(y.mul(w)?.sum())
}

pub fn norm_only<'t>(x: Var<'t, f64>) -> Result<Var<'t, f64>> {
    let c = x.shape()[1];
    let tape = x.tape();
    let g = tape.constant(Tensor::ones(&[c]));
    let b = tape.constant(Tensor::zeros(&[c]));
    x.instance_norm(g, b, 1e-5)
}

pub type Op = for<'t> fn(Var<'t, f64>) -> Result<Var<'t, f64>>;

/// Every differentiable tape op, each with three input shapes.
pub fn differentiable_ops() -> Vec<(&'static str, Op, Vec<Vec<usize>>)> {
    vec![
        (
            "add",
            |x| x.add(x.square()),
            vec![vec![3], vec![2, 4], vec![2, 2, 3]],
        ),
        (
            "sub",
            |x| x.sub(x.tanh()),
            vec![vec![3], vec![2, 4], vec![2, 2, 3]],
        ),
        (
            "mul",
            |x| x.mul(x.tanh()),
            vec![vec![3], vec![2, 4], vec![2, 2, 3]],
        ),
        (
            "scale",
            |x| Ok(x.scale(-1.7)),
            vec![vec![3], vec![2, 4], vec![5]],
        ),
        ("abs", |x| Ok(x.abs()), vec![vec![3], vec![2, 4], vec![6]]),
        (
            "mean",
            |x| Ok(x.square().mean()),
            vec![vec![3], vec![2, 4], vec![6]],
        ),
        (
            "relu",
            |x| Ok(x.relu()),
            vec![vec![4], vec![3, 3], vec![2, 5]],
        ),
        (
            "gelu",
            |x| Ok(x.gelu()),
            vec![vec![4], vec![3, 3], vec![2, 5]],
        ),
        (
            "softmax",
            |x| x.softmax(),
            vec![vec![1, 4], vec![3, 3], vec![2, 2, 5]],
        ),
        (
            "transpose",
            |x| x.transpose_last2(),
            vec![vec![2, 3], vec![2, 3, 4], vec![4, 1]],
        ),
        (
            "reshape",
            |x| {
                let n = x.value().numel();
                x.reshape(&[n])
            },
            vec![vec![2, 3], vec![2, 3, 4], vec![4, 1]],
        ),
        (
            "add_broadcast",
            |x| {
                let last = *x.shape().last().unwrap();
                let b = x.tape().constant(Tensor::from_fn(&[last], |i| i as f64));
                let rows = x.add_broadcast(b)?;
                rows.square()
                    .add_broadcast(x.tape().constant(Tensor::ones(&[last])))
            },
            vec![vec![2, 3], vec![4, 2], vec![2, 2, 3]],
        ),
        (
            "matmul",
            |x| {
                let s = x.shape();
                let w = x
                    .tape()
                    .constant(Tensor::from_fn(&[s[1], 3], |i| (i as f64).cos()));
                x.matmul(w)
            },
            vec![vec![2, 3], vec![4, 2], vec![1, 5]],
        ),
        (
            "matmul_rhs",
            |x| {
                let s = x.shape();
                let a = x
                    .tape()
                    .constant(Tensor::from_fn(&[3, s[0]], |i| (i as f64 * 0.7).sin()));
                a.matmul(x)
            },
            vec![vec![2, 3], vec![4, 2], vec![1, 5]],
        ),
        (
            "linear",
            |x| {
                let d = *x.shape().last().unwrap();
                let t = x.tape();
                let w = t.constant(Tensor::from_fn(&[d, 3], |i| (i as f64).cos()));
                let b = t.constant(Tensor::from_fn(&[3], |i| i as f64));
                x.linear(w, Some(b))
            },
            vec![vec![2, 3], vec![2, 2, 4], vec![5]],
        ),
        (
            "layer_norm",
            |x| {
                let d = *x.shape().last().unwrap();
                let t = x.tape();
                let g = t.constant(Tensor::from_fn(&[d], |i| 1.0 + i as f64 * 0.1));
                let b = t.constant(Tensor::from_fn(&[d], |i| i as f64 * -0.2));
                x.layer_norm(g, b, 1e-5)
            },
            vec![vec![2, 3], vec![2, 2, 4], vec![5]],
        ),
        (
            "instance_norm",
            norm_only,
            vec![vec![1, 2, 3, 3], vec![2, 1, 4, 2], vec![1, 3, 2, 5]],
        ),
        (
            "conv2d",
            |x| {
                let c = x.shape()[1];
                let w = x
                    .tape()
                    .constant(Tensor::from_fn(&[2, c, 3, 3], |i| (i as f64 * 0.3).sin()));
                let b = x.tape().constant(Tensor::from_fn(&[2], |i| i as f64));
                x.conv2d(w, Some(b), 2, 1)
            },
            vec![vec![1, 2, 5, 5], vec![2, 1, 6, 4], vec![1, 3, 7, 7]],
        ),
        (
            "conv_transpose2d",
            |x| {
                let c = x.shape()[1];
                let w = x
                    .tape()
                    .constant(Tensor::from_fn(&[c, 2, 3, 3], |i| (i as f64 * 0.3).cos()));
                let b = x.tape().constant(Tensor::from_fn(&[2], |i| i as f64));
                x.conv_transpose2d(w, Some(b), 2, 1, 1)
            },
            vec![vec![1, 2, 3, 3], vec![2, 1, 4, 2], vec![1, 3, 2, 5]],
        ),
        (
            "bilinear_resize",
            |x| x.bilinear_resize(5, 3),
            vec![vec![1, 1, 4, 4], vec![2, 2, 3, 6], vec![1, 1, 8, 8]],
        ),
        (
            "concat_channels",
            |x| concat_channels(&[x, x.square(), x]),
            vec![vec![1, 2, 2, 2], vec![2, 1, 3, 1], vec![3, 2, 1]],
        ),
        (
            "attention",
            |x| {
                let s = x.shape();
                let cfg =
                    mprvit::attention::AttentionConfig::for_model_dim(s[2], 2)?.with_tiles(2, 3)?;
                x.attention(x.tanh(), x.scale(0.5), cfg)
            },
            vec![vec![1, 4, 4], vec![2, 5, 2], vec![1, 7, 6]],
        ),
    ]
}
