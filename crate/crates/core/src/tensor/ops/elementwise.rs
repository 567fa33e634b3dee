use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

impl<'t, T: Scalar> Var<'t, T> {
    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        let out = a.zip_map(&b, |x, y| x + y)?;
        Ok(self.tape().push(out, &[self, other], |g| {
            vec![Some(g.clone()), Some(g.clone())]
        }))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        let out = a.zip_map(&b, |x, y| x - y)?;
        Ok(self.tape().push(out, &[self, other], |g| {
            vec![Some(g.clone()), Some(g.map(|v| -v))]
        }))
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        let out = a.zip_map(&b, |x, y| x * y)?;
        Ok(self.tape().push(out, &[self, other], move |g| {
            vec![
                Some(g.zip_map(&b, |gv, bv| gv * bv).unwrap()),
                Some(g.zip_map(&a, |gv, av| gv * av).unwrap()),
            ]
        }))
    }

    pub fn scale(self, factor: f64) -> Var<'t, T> {
        let c = T::of(factor);
        let out = self.value().map(|v| v * c);
        self.tape()
            .push(out, &[self], move |g| vec![Some(g.map(|v| v * c))])
    }

    pub fn square(self) -> Var<'t, T> {
        let a = self.value();
        let out = a.map(|v| v * v);
        self.tape().push(out, &[self], move |g| {
            let two = T::of(2.0);
            vec![Some(g.zip_map(&a, |gv, av| two * gv * av).unwrap())]
        })
    }

    /// Subgradient 0 at 0.
    pub fn abs(self) -> Var<'t, T> {
        let a = self.value();
        let out = a.map(|v| v.abs());
        self.tape().push(out, &[self], move |g| {
            vec![Some(g.zip_map(&a, |gv, av| gv * sign(av)).unwrap())]
        })
    }

    /// `self + other` where `other`'s shape is a suffix of `self`'s; `other` is
    /// repeated over the leading axes (row biases, position embeddings).
    pub fn add_broadcast(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        let (ash, bsh) = (a.shape(), b.shape());
        if bsh.len() > ash.len() || ash[ash.len() - bsh.len()..] != *bsh {
            return Err(Error::dim(format!(
                "add_broadcast: {bsh:?} is not a suffix of {ash:?}"
            )));
        }
        let inner = b.numel();
        let mut out = (*a).clone();
        if inner > 0 {
            for chunk in out.data_mut().chunks_mut(inner) {
                for (o, &bv) in chunk.iter_mut().zip(b.data()) {
                    *o += bv;
                }
            }
        }
        let bshape = bsh.to_vec();
        Ok(self.tape().push(out, &[self, other], move |g| {
            let mut gb = Tensor::zeros(&bshape);
            if inner > 0 {
                for chunk in g.data().chunks(inner) {
                    for (o, &gv) in gb.data_mut().iter_mut().zip(chunk) {
                        *o += gv;
                    }
                }
            }
            vec![Some(g.clone()), Some(gb)]
        }))
    }
}

pub(crate) fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}
