//! 2-D cross-correlation and its adjoint via im2col + GEMM.
//!
//! Batch items run in parallel; weight and bias gradients are reduced over the
//! batch sequentially in index order, so results do not depend on scheduling.

use rayon::prelude::*;

use super::linalg::{matmul_nt, matmul_raw, matmul_tn};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Output extent of a strided, zero-padded window.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Valid output-index range `[lo, hi)` whose input index `o*stride + tap - pad` lies in `[0, n)`.
fn valid_range(n: usize, out: usize, tap: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > tap {
        (pad - tap).div_ceil(stride)
    } else {
        0
    };
    let hi = if n + pad > tap {
        (n + pad - tap).div_ceil(stride).min(out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

pub(crate) fn im2col<T: Scalar>(src: &[T], g: &ConvGeom, dst: &mut [T]) {
    let (k, s, p) = (g.kernel, g.stride, g.pad);
    let (h, w, ho, wo) = (g.height, g.width, g.out_h, g.out_w);
    let n = ho * wo;
    for c in 0..g.channels {
        let plane = &src[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            let (oy_lo, oy_hi) = valid_range(h, ho, ki, s, p);
            for kj in 0..k {
                let row = &mut dst[((c * k + ki) * k + kj) * n..][..n];
                let (ox_lo, ox_hi) = valid_range(w, wo, kj, s, p);
                row[..oy_lo * wo].fill(T::zero());
                row[oy_hi * wo..].fill(T::zero());
                for oy in oy_lo..oy_hi {
                    let iy = oy * s + ki - p;
                    let out_row = &mut row[oy * wo..(oy + 1) * wo];
                    let in_row = &plane[iy * w..(iy + 1) * w];
                    out_row[..ox_lo].fill(T::zero());
                    out_row[ox_hi..].fill(T::zero());
                    if ox_lo < ox_hi {
                        let ix0 = ox_lo * s + kj - p;
                        if s == 1 {
                            out_row[ox_lo..ox_hi]
                                .copy_from_slice(&in_row[ix0..ix0 + (ox_hi - ox_lo)]);
                        } else {
                            for (i, o) in out_row[ox_lo..ox_hi].iter_mut().enumerate() {
                                *o = in_row[ix0 + i * s];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back into an image.
pub(crate) fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, dst: &mut [T]) {
    let (k, s, p) = (g.kernel, g.stride, g.pad);
    let (h, w, ho, wo) = (g.height, g.width, g.out_h, g.out_w);
    let n = ho * wo;
    for c in 0..g.channels {
        let plane = &mut dst[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            let (oy_lo, oy_hi) = valid_range(h, ho, ki, s, p);
            for kj in 0..k {
                let row = &cols[((c * k + ki) * k + kj) * n..][..n];
                let (ox_lo, ox_hi) = valid_range(w, wo, kj, s, p);
                if ox_lo >= ox_hi {
                    continue;
                }
                for oy in oy_lo..oy_hi {
                    let iy = oy * s + ki - p;
                    let in_row = &row[oy * wo..(oy + 1) * wo];
                    let out_row = &mut plane[iy * w..(iy + 1) * w];
                    let ix0 = ox_lo * s + kj - p;
                    for (i, &v) in in_row[ox_lo..ox_hi].iter().enumerate() {
                        out_row[ix0 + i * s] += v;
                    }
                }
            }
        }
    }
}

fn bias_grad<T: Scalar>(g: &Tensor<T>, b: usize, c: usize, hw: usize) -> Tensor<T> {
    let mut db = vec![T::zero(); c];
    for bi in 0..b {
        for (ci, o) in db.iter_mut().enumerate() {
            let start = (bi * c + ci) * hw;
            for &v in &g.data()[start..start + hw] {
                *o += v;
            }
        }
    }
    Tensor::new(&[c], db).unwrap()
}

fn reduce_in_order<T: Scalar>(parts: Vec<Vec<T>>, len: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); len];
    for part in parts {
        for (a, v) in acc.iter_mut().zip(part) {
            *a += v;
        }
    }
    acc
}

/// Plain forward convolution without a tape.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (b, cin, h, wd) = x.dims4("conv2d")?;
    let (cout, wcin, kh, kw) = w.dims4("conv2d weight")?;
    if wcin != cin || kh != kw {
        return Err(Error::dim(format!(
            "conv2d: input {:?}, weight {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let (ho, wo) = match (
        conv_out_extent(h, kh, stride, pad),
        conv_out_extent(wd, kw, stride, pad),
    ) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::dim(format!(
            "conv2d: output extent < 1 for input {h}×{wd}, kernel {kh}, stride {stride}, pad {pad}"
        ))),
    };
    if let Some(bias) = bias {
        if bias.shape() != [cout] {
            return Err(Error::dim(format!(
                "conv2d bias {:?} vs {cout} channels",
                bias.shape()
            )));
        }
    }
    let geom = ConvGeom {
        channels: cin,
        height: h,
        width: wd,
        kernel: kh,
        stride,
        pad,
        out_h: ho,
        out_w: wo,
    };
    let (kk, n) = (geom.col_rows(), geom.col_cols());
    let item_in = cin * h * wd;
    let item_out = cout * n;
    let mut out = vec![T::zero(); b * item_out];
    out.par_chunks_mut(item_out.max(1))
        .zip(x.data().par_chunks(item_in.max(1)))
        .for_each(|(o, xi)| {
            let y = if geom.is_pointwise() {
                matmul_raw(w.data(), xi, cout, kk, n)
            } else {
                let mut cols = vec![T::zero(); kk * n];
                im2col(xi, &geom, &mut cols);
                matmul_raw(w.data(), &cols, cout, kk, n)
            };
            o.copy_from_slice(&y);
            if let Some(bias) = bias {
                for (c, plane) in o.chunks_mut(n).enumerate() {
                    let bv = bias.data()[c];
                    plane.iter_mut().for_each(|v| *v += bv);
                }
            }
        });
    Tensor::new(&[b, cout, ho, wo], out)
}

/// Plain forward transposed convolution without a tape.
///
/// Weight layout is `[Cin, Cout, k, k]`, the same tensor a `Cout → Cin`
/// [`conv2d_forward`] would use, so the two are adjoint for shared weights.
pub fn conv_transpose2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
    output_pad: usize,
) -> Result<Tensor<T>> {
    let (geom, b, cin, cout) = transpose_geom(x, w, stride, pad, output_pad)?;
    if let Some(bias) = bias {
        if bias.shape() != [cout] {
            return Err(Error::dim(format!(
                "conv_transpose2d bias {:?} vs {cout} channels",
                bias.shape()
            )));
        }
    }
    let (kk, n) = (geom.col_rows(), geom.col_cols());
    let item_in = cin * n;
    let item_out = cout * geom.height * geom.width;
    let mut out = vec![T::zero(); b * item_out];
    out.par_chunks_mut(item_out.max(1))
        .zip(x.data().par_chunks(item_in.max(1)))
        .for_each(|(o, xi)| {
            let cols = matmul_tn(w.data(), xi, kk, cin, n);
            if geom.is_pointwise() {
                o.copy_from_slice(&cols);
            } else {
                col2im(&cols, &geom, o);
            }
            if let Some(bias) = bias {
                for (c, plane) in o.chunks_mut(geom.height * geom.width).enumerate() {
                    let bv = bias.data()[c];
                    plane.iter_mut().for_each(|v| *v += bv);
                }
            }
        });
    Tensor::new(&[b, cout, geom.height, geom.width], out)
}

/// Geometry of the conv whose adjoint the transposed conv is: the "image" is the
/// transposed conv's output, the "columns" its input.
fn transpose_geom<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
    output_pad: usize,
) -> Result<(ConvGeom, usize, usize, usize)> {
    let (b, cin, h, wd) = x.dims4("conv_transpose2d")?;
    let (wcin, cout, kh, kw) = w.dims4("conv_transpose2d weight")?;
    if wcin != cin || kh != kw {
        return Err(Error::dim(format!(
            "conv_transpose2d: input {:?}, weight {:?}",
            x.shape(),
            w.shape()
        )));
    }
    if stride == 0 || output_pad >= stride {
        return Err(Error::dim(format!(
            "conv_transpose2d: output padding {output_pad} must be < stride {stride}"
        )));
    }
    let extent = |n: usize| -> Result<usize> {
        let full = (n - 1) * stride + kh + output_pad;
        if n == 0 || full <= 2 * pad {
            return Err(Error::dim("conv_transpose2d: output extent < 1"));
        }
        Ok(full - 2 * pad)
    };
    let (ho, wo) = (extent(h)?, extent(wd)?);
    Ok((
        ConvGeom {
            channels: cout,
            height: ho,
            width: wo,
            kernel: kh,
            stride,
            pad,
            out_h: h,
            out_w: wd,
        },
        b,
        cin,
        cout,
    ))
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Zero-padded strided cross-correlation. `weight` is `[Cout, Cin, k, k]`.
    pub fn conv2d(
        self,
        weight: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'t, T>> {
        let (x, w) = (self.value(), weight.value());
        let bv = bias.map(|b| b.value());
        let out = conv2d_forward(&x, &w, bv.as_deref(), stride, pad)?;
        let (b, cin, h, wd) = x.dims4("conv2d")?;
        let (cout, _, k, _) = w.dims4("conv2d")?;
        let (_, _, ho, wo) = out.dims4("conv2d")?;
        let geom = ConvGeom {
            channels: cin,
            height: h,
            width: wd,
            kernel: k,
            stride,
            pad,
            out_h: ho,
            out_w: wo,
        };
        let mut parents = vec![self, weight];
        parents.extend(bias);
        let has_bias = bias.is_some();
        let x_shape = x.shape().to_vec();
        let w_shape = w.shape().to_vec();
        Ok(self.tape().push(out, &parents, move |g| {
            let (kk, n) = (geom.col_rows(), geom.col_cols());
            let item_in = cin * h * wd;
            let parts: Vec<(Vec<T>, Vec<T>)> = (0..b)
                .into_par_iter()
                .map(|bi| {
                    let xi = &x.data()[bi * item_in..(bi + 1) * item_in];
                    let gi = &g.data()[bi * cout * n..(bi + 1) * cout * n];
                    let mut cols = vec![T::zero(); kk * n];
                    if geom.is_pointwise() {
                        cols.copy_from_slice(xi);
                    } else {
                        im2col(xi, &geom, &mut cols);
                    }
                    let dw = matmul_nt(gi, &cols, cout, n, kk);
                    let dcols = matmul_tn(w.data(), gi, kk, cout, n);
                    let dx = if geom.is_pointwise() {
                        dcols
                    } else {
                        let mut dx = vec![T::zero(); item_in];
                        col2im(&dcols, &geom, &mut dx);
                        dx
                    };
                    (dx, dw)
                })
                .collect();
            let mut dx = Vec::with_capacity(b * item_in);
            let mut dws = Vec::with_capacity(b);
            for (dxi, dwi) in parts {
                dx.extend_from_slice(&dxi);
                dws.push(dwi);
            }
            let dw = reduce_in_order(dws, cout * kk);
            let mut grads = vec![
                Some(Tensor::new(&x_shape, dx).unwrap()),
                Some(Tensor::new(&w_shape, dw).unwrap()),
            ];
            if has_bias {
                grads.push(Some(bias_grad(g, b, cout, n)));
            }
            grads
        }))
    }

    /// Transposed convolution, the adjoint of [`Var::conv2d`] for shared weights.
    ///
    /// `weight` is `[Cin, Cout, k, k]`; output extent is
    /// `(H − 1)·stride − 2·pad + k + output_pad`.
    pub fn conv_transpose2d(
        self,
        weight: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Result<Var<'t, T>> {
        let (x, w) = (self.value(), weight.value());
        let bv = bias.map(|b| b.value());
        let out = conv_transpose2d_forward(&x, &w, bv.as_deref(), stride, pad, output_pad)?;
        let (geom, b, cin, cout) = transpose_geom(&x, &w, stride, pad, output_pad)?;
        let mut parents = vec![self, weight];
        parents.extend(bias);
        let has_bias = bias.is_some();
        let x_shape = x.shape().to_vec();
        let w_shape = w.shape().to_vec();
        Ok(self.tape().push(out, &parents, move |g| {
            let (kk, n) = (geom.col_rows(), geom.col_cols());
            let item_out = cout * geom.height * geom.width;
            let parts: Vec<(Vec<T>, Vec<T>)> = (0..b)
                .into_par_iter()
                .map(|bi| {
                    let xi = &x.data()[bi * cin * n..(bi + 1) * cin * n];
                    let gi = &g.data()[bi * item_out..(bi + 1) * item_out];
                    let gcols = if geom.is_pointwise() {
                        gi.to_vec()
                    } else {
                        let mut c = vec![T::zero(); kk * n];
                        im2col(gi, &geom, &mut c);
                        c
                    };
                    let dx = matmul_raw(w.data(), &gcols, cin, kk, n);
                    let dw = matmul_nt(xi, &gcols, cin, n, kk);
                    (dx, dw)
                })
                .collect();
            let mut dx = Vec::with_capacity(b * cin * n);
            let mut dws = Vec::with_capacity(b);
            for (dxi, dwi) in parts {
                dx.extend_from_slice(&dxi);
                dws.push(dwi);
            }
            let dw = reduce_in_order(dws, cin * kk);
            let mut grads = vec![
                Some(Tensor::new(&x_shape, dx).unwrap()),
                Some(Tensor::new(&w_shape, dw).unwrap()),
            ];
            if has_bias {
                grads.push(Some(bias_grad(g, b, cout, geom.height * geom.width)));
            }
            grads
        }))
    }
}
