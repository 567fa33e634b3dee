//! Separable resampling on a corner-aligned grid: output sample `i` reads the
//! input at `i·(n_in − 1)/(n_out − 1)`, so corners map to corners.
//!
//! Interpolants are written as `ref + Σ w·(v − ref)` so constant images come
//! back bit-exact.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

fn source_coord(i: usize, n_in: usize, n_out: usize) -> f64 {
    if n_out <= 1 || n_in <= 1 {
        0.0
    } else {
        i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
    }
}

#[derive(Clone, Copy)]
struct LinearTap<T> {
    i0: usize,
    i1: usize,
    w: T,
}

fn linear_taps<T: Scalar>(n_in: usize, n_out: usize) -> Vec<LinearTap<T>> {
    (0..n_out)
        .map(|i| {
            let s = source_coord(i, n_in, n_out);
            let i0 = (s.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            LinearTap {
                i0,
                i1,
                w: T::of(s - i0 as f64),
            }
        })
        .collect()
}

/// Resizes every row of length `cols`.
fn lerp_cols<T: Scalar>(src: &[T], cols: usize, taps: &[LinearTap<T>]) -> Vec<T> {
    let out_cols = taps.len();
    let mut out = Vec::with_capacity(src.len() / cols.max(1) * out_cols);
    for row in src.chunks(cols) {
        for t in taps {
            let (a, b) = (row[t.i0], row[t.i1]);
            out.push(a + t.w * (b - a));
        }
    }
    out
}

fn lerp_cols_backward<T: Scalar>(g: &[T], cols: usize, taps: &[LinearTap<T>]) -> Vec<T> {
    let out_cols = taps.len();
    let mut out = vec![T::zero(); g.len() / out_cols * cols];
    for (grow, orow) in g.chunks(out_cols).zip(out.chunks_mut(cols)) {
        for (&gv, t) in grow.iter().zip(taps) {
            orow[t.i0] += gv * (T::one() - t.w);
            orow[t.i1] += gv * t.w;
        }
    }
    out
}

/// Resizes along the row axis of each `rows × cols` plane.
fn lerp_rows<T: Scalar>(src: &[T], rows: usize, cols: usize, taps: &[LinearTap<T>]) -> Vec<T> {
    let plane = rows * cols;
    let mut out = Vec::with_capacity(src.len() / plane.max(1) * taps.len() * cols);
    for p in src.chunks(plane) {
        for t in taps {
            let (r0, r1) = (
                &p[t.i0 * cols..(t.i0 + 1) * cols],
                &p[t.i1 * cols..(t.i1 + 1) * cols],
            );
            out.extend(r0.iter().zip(r1).map(|(&a, &b)| a + t.w * (b - a)));
        }
    }
    out
}

fn lerp_rows_backward<T: Scalar>(
    g: &[T],
    rows: usize,
    cols: usize,
    taps: &[LinearTap<T>],
) -> Vec<T> {
    let out_plane = taps.len() * cols;
    let mut out = vec![T::zero(); g.len() / out_plane.max(1) * rows * cols];
    for (gp, op) in g.chunks(out_plane).zip(out.chunks_mut(rows * cols)) {
        for (r, t) in taps.iter().enumerate() {
            let grow = &gp[r * cols..(r + 1) * cols];
            for (j, &gv) in grow.iter().enumerate() {
                op[t.i0 * cols + j] += gv * (T::one() - t.w);
                op[t.i1 * cols + j] += gv * t.w;
            }
        }
    }
    out
}

fn check_target(h: usize, w: usize, out_h: usize, out_w: usize, op: &str) -> Result<()> {
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(Error::dim(format!(
            "{op}: cannot resize {h}×{w} to {out_h}×{out_w}"
        )));
    }
    Ok(())
}

/// Plain bilinear resize of a `B×C×H×W` tensor.
pub fn bilinear_resize_forward<T: Scalar>(
    x: &Tensor<T>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4("bilinear_resize")?;
    check_target(h, w, out_h, out_w, "bilinear_resize")?;
    let tw = linear_taps::<T>(w, out_w);
    let th = linear_taps::<T>(h, out_h);
    let tmp = lerp_cols(x.data(), w, &tw);
    let out = lerp_rows(&tmp, h, out_w, &th);
    Tensor::new(&[b, c, out_h, out_w], out)
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn bilinear_resize(self, out_h: usize, out_w: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let out = bilinear_resize_forward(&x, out_h, out_w)?;
        let (b, c, h, w) = x.dims4("bilinear_resize")?;
        let tw = linear_taps::<T>(w, out_w);
        let th = linear_taps::<T>(h, out_h);
        Ok(self.tape().push(out, &[self], move |g| {
            let gtmp = lerp_rows_backward(g.data(), h, out_w, &th);
            let gx = lerp_cols_backward(&gtmp, w, &tw);
            vec![Some(Tensor::new(&[b, c, h, w], gx).unwrap())]
        }))
    }
}

const KEYS_A: f64 = -0.5;

/// Keys cubic convolution kernel.
pub fn keys_kernel(x: f64) -> f64 {
    let a = KEYS_A;
    let x = x.abs();
    if x <= 1.0 {
        (a + 2.0) * x * x * x - (a + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        a * x * x * x - 5.0 * a * x * x + 8.0 * a * x - 4.0 * a
    } else {
        0.0
    }
}

struct CubicTap<T> {
    base: isize,
    reference: usize,
    w: [T; 4],
}

fn cubic_taps<T: Scalar>(n_in: usize, n_out: usize) -> Vec<CubicTap<T>> {
    (0..n_out)
        .map(|i| {
            let s = source_coord(i, n_in, n_out);
            let f = s.floor();
            let t = s - f;
            CubicTap {
                base: f as isize - 1,
                reference: (f as usize).min(n_in - 1),
                w: [
                    T::of(keys_kernel(1.0 + t)),
                    T::of(keys_kernel(t)),
                    T::of(keys_kernel(1.0 - t)),
                    T::of(keys_kernel(2.0 - t)),
                ],
            }
        })
        .collect()
}

/// Sample at a possibly out-of-range index, extending the line through the two
/// nearest edge samples so degree-1 signals are reproduced up to the border.
fn sample_extended<T: Scalar>(line: &[T], idx: isize, stride: usize) -> T {
    let n = line.len().div_ceil(stride) as isize;
    let at = |i: isize| line[i as usize * stride];
    if (0..n).contains(&idx) {
        return at(idx);
    }
    if n == 1 {
        return at(0);
    }
    if idx < 0 {
        let (a, b) = (at(0), at(1));
        a + T::of(idx as f64) * (b - a)
    } else {
        let (a, b) = (at(n - 1), at(n - 2));
        a + T::of((idx - n + 1) as f64) * (a - b)
    }
}

/// Keys (a = −0.5) bicubic resize of a `B×C×H×W` tensor; no gradient.
pub fn bicubic_resize<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4("bicubic_resize")?;
    check_target(h, w, out_h, out_w, "bicubic_resize")?;
    let tw = cubic_taps::<T>(w, out_w);
    let th = cubic_taps::<T>(h, out_h);
    let planes = b * c;
    let mut tmp = Vec::with_capacity(planes * h * out_w);
    for row in x.data().chunks(w) {
        for t in &tw {
            tmp.push(cubic_sample(row, 1, t));
        }
    }
    let mut out = Vec::with_capacity(planes * out_h * out_w);
    for p in tmp.chunks(h * out_w) {
        for t in &th {
            for j in 0..out_w {
                out.push(cubic_sample(&p[j..], out_w, t));
            }
        }
    }
    Tensor::new(&[b, c, out_h, out_w], out)
}

/// Interpolates along a strided line beginning at `line[0]`.
fn cubic_sample<T: Scalar>(line: &[T], stride: usize, tap: &CubicTap<T>) -> T {
    let r = line[tap.reference * stride];
    let mut acc = T::zero();
    for (k, &wk) in tap.w.iter().enumerate() {
        let v = sample_extended(line, tap.base + k as isize, stride);
        acc += wk * (v - r);
    }
    r + acc
}
