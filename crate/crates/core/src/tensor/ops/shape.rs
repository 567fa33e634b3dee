use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

impl<'t, T: Scalar> Var<'t, T> {
    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let a = self.value();
        let old = a.shape().to_vec();
        let out = (*a).clone().reshape(shape)?;
        Ok(self.tape().push(out, &[self], move |g| {
            vec![Some(g.clone().reshape(&old).expect("reshape back"))]
        }))
    }

    /// Swaps the last two axes: `[.., M, N] → [.., N, M]`.
    pub fn transpose_last2(self) -> Result<Var<'t, T>> {
        let a = self.value();
        let sh = a.shape();
        if sh.len() < 2 {
            return Err(Error::dim(format!("transpose_last2 on rank {}", sh.len())));
        }
        let (m, n) = (sh[sh.len() - 2], sh[sh.len() - 1]);
        let mut out_shape = sh.to_vec();
        out_shape.swap(sh.len() - 2, sh.len() - 1);
        let out = Tensor::new(&out_shape, transpose_blocks(a.data(), m, n))?;
        let in_shape = sh.to_vec();
        Ok(self.tape().push(out, &[self], move |g| {
            vec![Some(
                Tensor::new(&in_shape, transpose_blocks(g.data(), n, m)).unwrap(),
            )]
        }))
    }
}

/// Concatenates along axis 1 (channels for image tensors). All other extents must agree.
pub fn concat_channels<'t, T: Scalar>(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let sh0 = values[0].shape().to_vec();
    if sh0.len() < 2 {
        return Err(Error::dim("concat_channels needs rank ≥ 2"));
    }
    let outer = sh0[0];
    let inner: usize = sh0[2..].iter().product();
    let mut channels = Vec::with_capacity(values.len());
    for v in &values {
        let s = v.shape();
        if s.len() != sh0.len() || s[0] != outer || s[2..] != sh0[2..] {
            return Err(Error::dim(format!(
                "concat_channels: {:?} incompatible with {:?}",
                s, sh0
            )));
        }
        channels.push(s[1]);
    }
    let total: usize = channels.iter().sum();
    let mut out_shape = sh0.clone();
    out_shape[1] = total;
    let mut data = Vec::with_capacity(outer * total * inner);
    for b in 0..outer {
        for (v, &c) in values.iter().zip(&channels) {
            data.extend_from_slice(&v.data()[b * c * inner..(b + 1) * c * inner]);
        }
    }
    let out = Tensor::new(&out_shape, data)?;
    let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
    Ok(first.tape().push(out, parts, move |g| {
        let mut grads: Vec<Vec<T>> = channels
            .iter()
            .map(|&c| Vec::with_capacity(outer * c * inner))
            .collect();
        for b in 0..outer {
            let mut off = b * total * inner;
            for (gd, &c) in grads.iter_mut().zip(&channels) {
                gd.extend_from_slice(&g.data()[off..off + c * inner]);
                off += c * inner;
            }
        }
        grads
            .into_iter()
            .zip(&shapes)
            .map(|(d, s)| Some(Tensor::new(s, d).unwrap()))
            .collect()
    }))
}

/// Transposes each contiguous `m×n` block of `data`.
pub(crate) fn transpose_blocks<T: Copy>(data: &[T], m: usize, n: usize) -> Vec<T> {
    let block = m * n;
    let mut out = Vec::with_capacity(data.len());
    if block == 0 {
        return out;
    }
    for chunk in data.chunks(block) {
        for j in 0..n {
            for i in 0..m {
                out.push(chunk[i * n + j]);
            }
        }
    }
    out
}

impl<'t, T: Scalar> Var<'t, T> {
    /// First `len` entries along axis 0.
    pub fn narrow_leading(self, len: usize) -> Result<Var<'t, T>> {
        let a = self.value();
        let sh = a.shape().to_vec();
        if sh.is_empty() || len > sh[0] {
            return Err(Error::dim(format!("narrow_leading({len}) on {sh:?}")));
        }
        if len == sh[0] {
            return Ok(self);
        }
        let row: usize = sh[1..].iter().product();
        let mut out_shape = sh.clone();
        out_shape[0] = len;
        let out = Tensor::new(&out_shape, a.data()[..len * row].to_vec())?;
        Ok(self.tape().push(out, &[self], move |g| {
            let mut full = Tensor::zeros(&sh);
            full.data_mut()[..len * row].copy_from_slice(g.data());
            vec![Some(full)]
        }))
    }
}
