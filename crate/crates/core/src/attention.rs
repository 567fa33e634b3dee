//! Exact scaled dot-product attention.
//!
//! [`naive_attention`] materializes the full `T×T` score matrix and is kept as
//! the reference. [`flash_attention`] walks key/value tiles with a running
//! row max `m`, normalizer `ℓ` and output accumulator, rescaling by
//! `exp(m_old − m_new)` whenever a tile raises the max, so only
//! `tile_q × tile_k` scores exist at any time. The backward pass recomputes
//! tile scores from the saved per-row log-sum-exp instead of storing
//! probabilities.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::ops::{matmul_nt, matmul_raw, softmax_in_place};
use crate::tensor::{Scalar, Tensor, Var};

pub const DEFAULT_TILE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionConfig {
    pub num_heads: usize,
    pub head_dim: usize,
    pub tile_q: usize,
    pub tile_k: usize,
}

impl AttentionConfig {
    pub fn new(num_heads: usize, head_dim: usize) -> Result<Self> {
        Self {
            num_heads,
            head_dim,
            tile_q: DEFAULT_TILE,
            tile_k: DEFAULT_TILE,
        }
        .validated()
    }

    /// Splits `model_dim` evenly across `num_heads`.
    pub fn for_model_dim(model_dim: usize, num_heads: usize) -> Result<Self> {
        if num_heads == 0 || model_dim % num_heads != 0 {
            return Err(Error::Config(format!(
                "model width {model_dim} is not divisible by {num_heads} heads"
            )));
        }
        Self::new(num_heads, model_dim / num_heads)
    }

    pub fn with_tiles(mut self, tile_q: usize, tile_k: usize) -> Result<Self> {
        self.tile_q = tile_q;
        self.tile_k = tile_k;
        self.validated()
    }

    pub fn model_dim(&self) -> usize {
        self.num_heads * self.head_dim
    }

    fn validated(self) -> Result<Self> {
        if self.num_heads == 0 || self.head_dim == 0 || self.tile_q == 0 || self.tile_k == 0 {
            return Err(Error::Config(format!("invalid attention config {self:?}")));
        }
        Ok(self)
    }
}

/// Auxiliary storage used by one attention call, in elements.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AuxMemory {
    pub elements: usize,
}

fn qkv_dims<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
) -> Result<(usize, usize, usize)> {
    match (q.shape(), k.shape(), v.shape()) {
        ([tq, d], [tk, dk], [tv, dv]) if d == dk && tk == tv && dv == d && *tq > 0 && *tk > 0 => {
            Ok((*tq, *tk, *d))
        }
        (a, b, c) => Err(Error::dim(format!(
            "attention expects Q T×d, K T×d, V T×d; got {a:?}, {b:?}, {c:?}"
        ))),
    }
}

/// `softmax(Q·Kᵀ/√d)·V` with the full score matrix.
pub fn naive_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
) -> Result<Tensor<T>> {
    Ok(naive_attention_with_memory(q, k, v)?.0)
}

pub fn naive_attention_with_memory<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
) -> Result<(Tensor<T>, AuxMemory)> {
    let (tq, tk, d) = qkv_dims(q, k, v)?;
    let scale = T::of(1.0 / (d as f64).sqrt());
    let mut scores = matmul_nt(q.data(), k.data(), tq, d, tk);
    for row in scores.chunks_mut(tk) {
        row.iter_mut().for_each(|s| *s *= scale);
        softmax_in_place(row);
    }
    let out = matmul_raw(&scores, v.data(), tq, tk, d);
    let mem = AuxMemory {
        elements: scores.len() + out.len(),
    };
    Ok((Tensor::new(&[tq, d], out)?, mem))
}

/// Tiled exact attention for one head. `cfg.head_dim` must equal `d`.
pub fn flash_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    cfg: &AttentionConfig,
) -> Result<Tensor<T>> {
    Ok(flash_attention_with_memory(q, k, v, cfg)?.0)
}

pub fn flash_attention_with_memory<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    cfg: &AttentionConfig,
) -> Result<(Tensor<T>, AuxMemory)> {
    let (tq, tk, d) = qkv_dims(q, k, v)?;
    if d != cfg.head_dim {
        return Err(Error::dim(format!(
            "head width {d} does not match configured head_dim {}",
            cfg.head_dim
        )));
    }
    let mut out = vec![T::zero(); tq * d];
    let mut lse = vec![T::zero(); tq];
    let mut scratch = FlashScratch::new(cfg.tile_q, cfg.tile_k, d);
    flash_forward(
        q.data(),
        k.data(),
        v.data(),
        tq,
        tk,
        d,
        cfg,
        &mut out,
        &mut lse,
        &mut scratch,
    );
    let mem = AuxMemory {
        elements: scratch.elements() + out.len() + lse.len(),
    };
    Ok((Tensor::new(&[tq, d], out)?, mem))
}

struct FlashScratch<T> {
    scores: Vec<T>,
    row_max: Vec<T>,
    row_sum: Vec<T>,
    acc: Vec<T>,
}

impl<T: Scalar> FlashScratch<T> {
    fn new(tile_q: usize, tile_k: usize, d: usize) -> Self {
        Self {
            scores: vec![T::zero(); tile_q * tile_k],
            row_max: vec![T::zero(); tile_q],
            row_sum: vec![T::zero(); tile_q],
            acc: vec![T::zero(); tile_q * d],
        }
    }

    fn elements(&self) -> usize {
        self.scores.len() + self.row_max.len() + self.row_sum.len() + self.acc.len()
    }
}

/// Online-softmax forward for one head. Writes the output and per-row
/// log-sum-exp of the scaled scores.
#[allow(clippy::too_many_arguments)]
fn flash_forward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    tq: usize,
    tk: usize,
    d: usize,
    cfg: &AttentionConfig,
    out: &mut [T],
    lse: &mut [T],
    s: &mut FlashScratch<T>,
) {
    let scale = T::of(1.0 / (d as f64).sqrt());
    let (bq_max, bk_max) = (cfg.tile_q.min(tq), cfg.tile_k.min(tk));
    for i0 in (0..tq).step_by(bq_max) {
        let bq = bq_max.min(tq - i0);
        let q_tile = &q[i0 * d..(i0 + bq) * d];
        s.row_max[..bq].fill(T::neg_infinity());
        s.row_sum[..bq].fill(T::zero());
        s.acc[..bq * d].fill(T::zero());

        for j0 in (0..tk).step_by(bk_max) {
            let bk = bk_max.min(tk - j0);
            let k_tile = &k[j0 * d..(j0 + bk) * d];
            let v_tile = &v[j0 * d..(j0 + bk) * d];
            let scores = &mut s.scores[..bq * bk];
            // scores = scale · Q_i · K_jᵀ
            T::gemm(
                bq,
                d,
                bk,
                scale,
                q_tile,
                d as isize,
                1,
                k_tile,
                1,
                d as isize,
                T::zero(),
                scores,
                bk as isize,
                1,
            );

            for r in 0..bq {
                let row = &mut scores[r * bk..(r + 1) * bk];
                let tile_max =
                    row.iter()
                        .copied()
                        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
                let m_old = s.row_max[r];
                let m_new = if tile_max > m_old { tile_max } else { m_old };
                let rescale = if m_old == T::neg_infinity() {
                    T::zero()
                } else {
                    (m_old - m_new).exp()
                };
                let mut tile_sum = T::zero();
                for p in row.iter_mut() {
                    *p = (*p - m_new).exp();
                    tile_sum += *p;
                }
                s.row_sum[r] = s.row_sum[r] * rescale + tile_sum;
                s.row_max[r] = m_new;
                s.acc[r * d..(r + 1) * d]
                    .iter_mut()
                    .for_each(|a| *a *= rescale);
            }
            // acc += P · V_j
            T::gemm(
                bq,
                bk,
                d,
                T::one(),
                scores,
                bk as isize,
                1,
                v_tile,
                d as isize,
                1,
                T::one(),
                &mut s.acc[..bq * d],
                d as isize,
                1,
            );
        }

        for r in 0..bq {
            let l = s.row_sum[r];
            let inv = l.recip();
            for (o, &a) in out[(i0 + r) * d..(i0 + r + 1) * d]
                .iter_mut()
                .zip(&s.acc[r * d..(r + 1) * d])
            {
                *o = a * inv;
            }
            lse[i0 + r] = s.row_max[r] + l.ln();
        }
    }
}

/// Gradients of one head given the saved output and log-sum-exp.
#[allow(clippy::too_many_arguments)]
fn flash_backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    out: &[T],
    lse: &[T],
    d_out: &[T],
    t: usize,
    d: usize,
    cfg: &AttentionConfig,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let scale = T::of(1.0 / (d as f64).sqrt());
    let mut dq = vec![T::zero(); t * d];
    let mut dk = vec![T::zero(); t * d];
    let mut dv = vec![T::zero(); t * d];
    let delta: Vec<T> = (0..t)
        .map(|r| {
            let mut acc = T::zero();
            for j in 0..d {
                acc += d_out[r * d + j] * out[r * d + j];
            }
            acc
        })
        .collect();
    let (bq_max, bk_max) = (cfg.tile_q.min(t), cfg.tile_k.min(t));
    let mut p = vec![T::zero(); bq_max * bk_max];
    let mut dp = vec![T::zero(); bq_max * bk_max];

    for j0 in (0..t).step_by(bk_max) {
        let bk = bk_max.min(t - j0);
        let k_tile = &k[j0 * d..(j0 + bk) * d];
        let v_tile = &v[j0 * d..(j0 + bk) * d];
        for i0 in (0..t).step_by(bq_max) {
            let bq = bq_max.min(t - i0);
            let q_tile = &q[i0 * d..(i0 + bq) * d];
            let do_tile = &d_out[i0 * d..(i0 + bq) * d];
            let p = &mut p[..bq * bk];
            let dp = &mut dp[..bq * bk];
            T::gemm(
                bq,
                d,
                bk,
                scale,
                q_tile,
                d as isize,
                1,
                k_tile,
                1,
                d as isize,
                T::zero(),
                p,
                bk as isize,
                1,
            );
            for r in 0..bq {
                let l = lse[i0 + r];
                p[r * bk..(r + 1) * bk]
                    .iter_mut()
                    .for_each(|s| *s = (*s - l).exp());
            }
            // dV_j += Pᵀ · dO_i
            T::gemm(
                bk,
                bq,
                d,
                T::one(),
                p,
                1,
                bk as isize,
                do_tile,
                d as isize,
                1,
                T::one(),
                &mut dv[j0 * d..(j0 + bk) * d],
                d as isize,
                1,
            );
            // dP = dO_i · V_jᵀ
            T::gemm(
                bq,
                d,
                bk,
                T::one(),
                do_tile,
                d as isize,
                1,
                v_tile,
                1,
                d as isize,
                T::zero(),
                dp,
                bk as isize,
                1,
            );
            // dS = P ∘ (dP − Δ)
            for r in 0..bq {
                let dl = delta[i0 + r];
                for c in 0..bk {
                    let idx = r * bk + c;
                    dp[idx] = p[idx] * (dp[idx] - dl);
                }
            }
            // dQ_i += scale · dS · K_j
            T::gemm(
                bq,
                bk,
                d,
                scale,
                dp,
                bk as isize,
                1,
                k_tile,
                d as isize,
                1,
                T::one(),
                &mut dq[i0 * d..(i0 + bq) * d],
                d as isize,
                1,
            );
            // dK_j += scale · dSᵀ · Q_i
            T::gemm(
                bk,
                bq,
                d,
                scale,
                dp,
                1,
                bk as isize,
                q_tile,
                d as isize,
                1,
                T::one(),
                &mut dk[j0 * d..(j0 + bk) * d],
                d as isize,
                1,
            );
        }
    }
    (dq, dk, dv)
}

/// Copies head `h` of row-major `[T, D]` into a contiguous `[T, hd]` block.
fn gather_head<T: Scalar>(src: &[T], t: usize, model_dim: usize, h: usize, hd: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(t * hd);
    for r in 0..t {
        out.extend_from_slice(&src[r * model_dim + h * hd..r * model_dim + (h + 1) * hd]);
    }
    out
}

fn scatter_head<T: Scalar>(
    dst: &mut [T],
    block: &[T],
    t: usize,
    model_dim: usize,
    h: usize,
    hd: usize,
) {
    for r in 0..t {
        dst[r * model_dim + h * hd..r * model_dim + (h + 1) * hd]
            .copy_from_slice(&block[r * hd..(r + 1) * hd]);
    }
}

fn heads_dims(shape: &[usize], cfg: &AttentionConfig) -> Result<(usize, usize)> {
    match shape {
        [_, t, dm] if *dm == cfg.model_dim() && *t > 0 => Ok((*t, *dm)),
        _ => Err(Error::dim(format!(
            "multi-head attention expects B×T×{}, got {shape:?}",
            cfg.model_dim()
        ))),
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Per-head tiled attention over already-projected `B×T×D` queries, keys
    /// and values. Heads occupy contiguous column blocks of width `head_dim`.
    pub fn attention(
        self,
        keys: Var<'t, T>,
        values: Var<'t, T>,
        cfg: AttentionConfig,
    ) -> Result<Var<'t, T>> {
        let (q, k, v) = (self.value(), keys.value(), values.value());
        if q.shape() != k.shape() || q.shape() != v.shape() {
            return Err(Error::dim(format!(
                "attention: Q {:?}, K {:?}, V {:?}",
                q.shape(),
                k.shape(),
                v.shape()
            )));
        }
        let (t, dm) = heads_dims(q.shape(), &cfg)?;
        let b = q.shape()[0];
        let (nh, hd) = (cfg.num_heads, cfg.head_dim);

        let heads: Vec<(Vec<T>, Vec<T>)> = (0..b * nh)
            .into_par_iter()
            .map(|bh| {
                let (bi, h) = (bh / nh, bh % nh);
                let base = bi * t * dm;
                let qh = gather_head(&q.data()[base..base + t * dm], t, dm, h, hd);
                let kh = gather_head(&k.data()[base..base + t * dm], t, dm, h, hd);
                let vh = gather_head(&v.data()[base..base + t * dm], t, dm, h, hd);
                let mut o = vec![T::zero(); t * hd];
                let mut lse = vec![T::zero(); t];
                let mut scratch = FlashScratch::new(cfg.tile_q, cfg.tile_k, hd);
                flash_forward(
                    &qh,
                    &kh,
                    &vh,
                    t,
                    t,
                    hd,
                    &cfg,
                    &mut o,
                    &mut lse,
                    &mut scratch,
                );
                (o, lse)
            })
            .collect();
        let mut out = vec![T::zero(); b * t * dm];
        let mut lses = Vec::with_capacity(b * nh);
        for (bh, (o, lse)) in heads.into_iter().enumerate() {
            let (bi, h) = (bh / nh, bh % nh);
            scatter_head(&mut out[bi * t * dm..(bi + 1) * t * dm], &o, t, dm, h, hd);
            lses.push(lse);
        }
        let out = std::sync::Arc::new(Tensor::new(q.shape(), out)?);
        let saved_out = out.clone();
        let shape = q.shape().to_vec();

        Ok(self
            .tape()
            .push_shared(out, &[self, keys, values], move |g| {
                let parts: Vec<(Vec<T>, Vec<T>, Vec<T>)> = (0..b * nh)
                    .into_par_iter()
                    .map(|bh| {
                        let (bi, h) = (bh / nh, bh % nh);
                        let base = bi * t * dm;
                        let span = base..base + t * dm;
                        let qh = gather_head(&q.data()[span.clone()], t, dm, h, hd);
                        let kh = gather_head(&k.data()[span.clone()], t, dm, h, hd);
                        let vh = gather_head(&v.data()[span.clone()], t, dm, h, hd);
                        let oh = gather_head(&saved_out.data()[span.clone()], t, dm, h, hd);
                        let gh = gather_head(&g.data()[span], t, dm, h, hd);
                        flash_backward(&qh, &kh, &vh, &oh, &lses[bh], &gh, t, hd, &cfg)
                    })
                    .collect();
                let mut dq = vec![T::zero(); b * t * dm];
                let mut dk = vec![T::zero(); b * t * dm];
                let mut dv = vec![T::zero(); b * t * dm];
                for (bh, (gq, gk, gv)) in parts.into_iter().enumerate() {
                    let (bi, h) = (bh / nh, bh % nh);
                    let span = bi * t * dm..(bi + 1) * t * dm;
                    scatter_head(&mut dq[span.clone()], &gq, t, dm, h, hd);
                    scatter_head(&mut dk[span.clone()], &gk, t, dm, h, hd);
                    scatter_head(&mut dv[span], &gv, t, dm, h, hd);
                }
                vec![
                    Some(Tensor::new(&shape, dq).unwrap()),
                    Some(Tensor::new(&shape, dk).unwrap()),
                    Some(Tensor::new(&shape, dv).unwrap()),
                ]
            }))
    }
}

/// Projection weights of one attention layer, `x·W + b` convention.
#[derive(Debug, Clone, Copy)]
pub struct MhaWeights<'t, T: Scalar> {
    pub wq: Var<'t, T>,
    pub bq: Option<Var<'t, T>>,
    pub wk: Var<'t, T>,
    pub bk: Option<Var<'t, T>>,
    pub wv: Var<'t, T>,
    pub bv: Option<Var<'t, T>>,
    pub wo: Var<'t, T>,
    pub bo: Option<Var<'t, T>>,
}

/// Q/K/V projections, per-head tiled attention, head concat, output projection.
///
/// `x` is `T×D` or `B×T×D`; the result has the same shape.
pub fn multi_head_attention<'t, T: Scalar>(
    x: Var<'t, T>,
    w: &MhaWeights<'t, T>,
    cfg: AttentionConfig,
) -> Result<Var<'t, T>> {
    let shape = x.shape();
    let x3 = match shape[..] {
        [t, d] => x.reshape(&[1, t, d])?,
        [_, _, _] => x,
        _ => return Err(Error::dim(format!("multi-head attention input {shape:?}"))),
    };
    let d = *shape.last().unwrap();
    if d % cfg.num_heads != 0 || d != cfg.model_dim() {
        return Err(Error::Config(format!(
            "model width {d} does not split into {} heads of {}",
            cfg.num_heads, cfg.head_dim
        )));
    }
    let q = x3.linear(w.wq, w.bq)?;
    let k = x3.linear(w.wk, w.bk)?;
    let v = x3.linear(w.wv, w.bv)?;
    let heads = q.attention(k, v, cfg)?;
    let y = heads.linear(w.wo, w.bo)?;
    if shape.len() == 2 {
        y.reshape(&shape)
    } else {
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn single_row_returns_value_row() {
        let q = Tensor::<f32>::new(&[1, 3], vec![0.3, -1.0, 2.0]).unwrap();
        let k = Tensor::<f32>::new(&[1, 3], vec![1.0, 1.0, 1.0]).unwrap();
        let v = Tensor::<f32>::new(&[1, 3], vec![4.0, 5.0, 6.0]).unwrap();
        let cfg = AttentionConfig::new(1, 3).unwrap();
        assert_eq!(naive_attention(&q, &k, &v).unwrap().data(), v.data());
        assert_eq!(flash_attention(&q, &k, &v, &cfg).unwrap().data(), v.data());
    }

    #[test]
    fn zero_keys_average_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = rand_t(&[5, 4], &mut rng);
        let k = Tensor::zeros(&[5, 4]);
        let v = rand_t(&[5, 4], &mut rng);
        let cfg = AttentionConfig::new(1, 4)
            .unwrap()
            .with_tiles(2, 2)
            .unwrap();
        let out = flash_attention(&q, &k, &v, &cfg).unwrap();
        for j in 0..4 {
            let mean: f64 = (0..5).map(|r| v.data()[r * 4 + j]).sum::<f64>() / 5.0;
            for r in 0..5 {
                assert!((out.data()[r * 4 + j] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let q = Tensor::<f32>::zeros(&[4, 3]);
        let k = Tensor::<f32>::zeros(&[4, 2]);
        assert!(matches!(
            naive_attention(&q, &k, &k),
            Err(Error::Dimension(_))
        ));
        let cfg = AttentionConfig::new(1, 3).unwrap();
        assert!(matches!(
            flash_attention(&q, &k, &k, &cfg),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn indivisible_width_is_a_config_error() {
        assert!(matches!(
            AttentionConfig::for_model_dim(10, 3),
            Err(Error::Config(_))
        ));
        assert!(AttentionConfig::new(0, 4).is_err());
        assert!(AttentionConfig::new(1, 4)
            .unwrap()
            .with_tiles(0, 4)
            .is_err());
    }

    #[test]
    fn single_tile_matches_naive_tightly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = rand_t(&[9, 5], &mut rng).cast::<f32>();
        let k = rand_t(&[9, 5], &mut rng).cast::<f32>();
        let v = rand_t(&[9, 5], &mut rng).cast::<f32>();
        let cfg = AttentionConfig::new(1, 5)
            .unwrap()
            .with_tiles(64, 64)
            .unwrap();
        let a = flash_attention(&q, &k, &v, &cfg).unwrap();
        let b = naive_attention(&q, &k, &v).unwrap();
        assert!(a.max_abs_diff(&b) <= 1e-6);
    }
}
