use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

/// Normalizes contiguous groups of `len` values, `group → channel` via `chan(group)`.
///
/// Returns `(y, xhat, rstd)`.
fn normalize_groups<T: Scalar>(
    x: &[T],
    len: usize,
    eps: T,
    gamma: &[T],
    beta: &[T],
    affine_index: impl Fn(usize, usize) -> usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = T::of(len as f64);
    let groups = x.len() / len;
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstds = Vec::with_capacity(groups);
    for gi in 0..groups {
        let xs = &x[gi * len..(gi + 1) * len];
        let mut mean = T::zero();
        for &v in xs {
            mean += v;
        }
        mean /= n;
        let mut var = T::zero();
        for &v in xs {
            let d = v - mean;
            var += d * d;
        }
        var /= n;
        let rstd = (var + eps).sqrt().recip();
        rstds.push(rstd);
        for j in 0..len {
            let a = affine_index(gi, j);
            let h = (xs[j] - mean) * rstd;
            xhat[gi * len + j] = h;
            y[gi * len + j] = gamma[a] * h + beta[a];
        }
    }
    (y, xhat, rstds)
}

/// `dx = rstd/N · (N·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))` per group.
fn normalize_backward<T: Scalar>(dxhat: &[T], xhat: &[T], rstd: &[T], len: usize) -> Vec<T> {
    let n = T::of(len as f64);
    let mut dx = vec![T::zero(); dxhat.len()];
    for (gi, &r) in rstd.iter().enumerate() {
        let range = gi * len..(gi + 1) * len;
        let (dh, h) = (&dxhat[range.clone()], &xhat[range.clone()]);
        let mut s1 = T::zero();
        let mut s2 = T::zero();
        for j in 0..len {
            s1 += dh[j];
            s2 += dh[j] * h[j];
        }
        for (j, o) in dx[range].iter_mut().enumerate() {
            *o = r / n * (n * dh[j] - s1 - h[j] * s2);
        }
    }
    dx
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Per-(sample, channel) plane normalization with a per-channel affine.
    pub fn instance_norm(
        self,
        gamma: Var<'t, T>,
        beta: Var<'t, T>,
        eps: f64,
    ) -> Result<Var<'t, T>> {
        let x = self.value();
        let (b, c, h, w) = x.dims4("instance_norm")?;
        let (gv, bv) = (gamma.value(), beta.value());
        if gv.shape() != [c] || bv.shape() != [c] {
            return Err(Error::dim(format!(
                "instance_norm affine {:?}/{:?} vs {c} channels",
                gv.shape(),
                bv.shape()
            )));
        }
        let hw = h * w;
        let (y, xhat, rstd) =
            normalize_groups(x.data(), hw, T::of(eps), gv.data(), bv.data(), |g, _| g % c);
        let out = Tensor::new(x.shape(), y)?;
        Ok(self.tape().push(out, &[self, gamma, beta], move |g| {
            let gd = g.data();
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            let mut dxhat = vec![T::zero(); gd.len()];
            for gi in 0..b * c {
                let ch = gi % c;
                let gam = gv.data()[ch];
                for j in gi * hw..(gi + 1) * hw {
                    dgamma[ch] += gd[j] * xhat[j];
                    dbeta[ch] += gd[j];
                    dxhat[j] = gd[j] * gam;
                }
            }
            let dx = normalize_backward(&dxhat, &xhat, &rstd, hw);
            vec![
                Some(Tensor::new(&[b, c, h, w], dx).unwrap()),
                Some(Tensor::new(&[c], dgamma).unwrap()),
                Some(Tensor::new(&[c], dbeta).unwrap()),
            ]
        }))
    }

    /// Normalization over the last axis with an affine of that width.
    pub fn layer_norm(self, gamma: Var<'t, T>, beta: Var<'t, T>, eps: f64) -> Result<Var<'t, T>> {
        let x = self.value();
        let d = *x
            .shape()
            .last()
            .ok_or_else(|| Error::dim("layer_norm on a scalar"))?;
        let (gv, bv) = (gamma.value(), beta.value());
        if gv.shape() != [d] || bv.shape() != [d] {
            return Err(Error::dim(format!(
                "layer_norm affine {:?}/{:?} vs width {d}",
                gv.shape(),
                bv.shape()
            )));
        }
        let (y, xhat, rstd) =
            normalize_groups(x.data(), d, T::of(eps), gv.data(), bv.data(), |_, j| j);
        let shape = x.shape().to_vec();
        let out = Tensor::new(&shape, y)?;
        Ok(self.tape().push(out, &[self, gamma, beta], move |g| {
            let gd = g.data();
            let mut dgamma = vec![T::zero(); d];
            let mut dbeta = vec![T::zero(); d];
            let mut dxhat = vec![T::zero(); gd.len()];
            for (i, (&gv_i, &h)) in gd.iter().zip(&xhat).enumerate() {
                let j = i % d;
                dgamma[j] += gv_i * h;
                dbeta[j] += gv_i;
                dxhat[i] = gv_i * gv.data()[j];
            }
            let dx = normalize_backward(&dxhat, &xhat, &rstd, d);
            vec![
                Some(Tensor::new(&shape, dx).unwrap()),
                Some(Tensor::new(&[d], dgamma).unwrap()),
                Some(Tensor::new(&[d], dbeta).unwrap()),
            ]
        }))
    }
}
