use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

/// Row-wise softmax over the last axis with max subtraction.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let d = *x
        .shape()
        .last()
        .ok_or_else(|| Error::dim("softmax on a scalar"))?;
    let mut out = x.clone();
    if d == 0 {
        return Ok(out);
    }
    for row in out.data_mut().chunks_mut(d) {
        softmax_in_place(row);
    }
    Ok(out)
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let m = row
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    let mut z = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Softmax over the last axis.
    pub fn softmax(self) -> Result<Var<'t, T>> {
        let y = std::sync::Arc::new(softmax_rows(&self.value())?);
        let d = *y.shape().last().unwrap();
        let saved = y.clone();
        Ok(self.tape().push_shared(y, &[self], move |g| {
            let mut dx = vec![T::zero(); g.numel()];
            for ((dxr, gr), yr) in dx
                .chunks_mut(d)
                .zip(g.data().chunks(d))
                .zip(saved.data().chunks(d))
            {
                let mut dot = T::zero();
                for (&gv, &yv) in gr.iter().zip(yr) {
                    dot += gv * yv;
                }
                for ((o, &gv), &yv) in dxr.iter_mut().zip(gr).zip(yr) {
                    *o = yv * (gv - dot);
                }
            }
            vec![Some(Tensor::new(saved.shape(), dx).unwrap())]
        }))
    }
}
