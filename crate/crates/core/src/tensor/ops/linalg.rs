use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

/// `c = a·b` for row-major `a: m×k`, `b: k×n`.
pub(crate) fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    T::gemm(
        m,
        k,
        n,
        T::one(),
        a,
        k as isize,
        1,
        b,
        n as isize,
        1,
        T::zero(),
        &mut c,
        n as isize,
        1,
    );
    c
}

/// `c = aᵀ·b` for row-major `a: k×m`, `b: k×n`.
pub(crate) fn matmul_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    T::gemm(
        m,
        k,
        n,
        T::one(),
        a,
        1,
        m as isize,
        b,
        n as isize,
        1,
        T::zero(),
        &mut c,
        n as isize,
        1,
    );
    c
}

/// `c = a·bᵀ` for row-major `a: m×k`, `b: n×k`.
pub(crate) fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    T::gemm(
        m,
        k,
        n,
        T::one(),
        a,
        k as isize,
        1,
        b,
        1,
        k as isize,
        T::zero(),
        &mut c,
        n as isize,
        1,
    );
    c
}

/// Plain matrix product of two rank-2 tensors.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k, n) = matmul_dims(a, b)?;
    Tensor::new(&[m, n], matmul_raw(a.data(), b.data(), m, k, n))
}

fn matmul_dims<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match (a.shape(), b.shape()) {
        ([m, k], [k2, n]) if k == k2 => Ok((*m, *k, *n)),
        (sa, sb) => Err(Error::dim(format!("matmul: {sa:?} × {sb:?}"))),
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    /// `[M×K]·[K×N]`; backward gives `dA = dC·Bᵀ`, `dB = Aᵀ·dC`.
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        let (m, k, n) = matmul_dims(&a, &b)?;
        let out = Tensor::new(&[m, n], matmul_raw(a.data(), b.data(), m, k, n))?;
        Ok(self.tape().push(out, &[self, other], move |g| {
            let da = matmul_nt(g.data(), b.data(), m, n, k);
            let db = matmul_tn(a.data(), g.data(), k, m, n);
            vec![
                Some(Tensor::new(&[m, k], da).unwrap()),
                Some(Tensor::new(&[k, n], db).unwrap()),
            ]
        }))
    }

    /// Affine map over the last axis: `x·W + b` with `W: in×out`, `b: out`.
    pub fn linear(self, weight: Var<'t, T>, bias: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        let (x, w) = (self.value(), weight.value());
        let xs = x.shape().to_vec();
        let ws = w.shape().to_vec();
        let (d_in, d_out) = match ws[..] {
            [i, o] => (i, o),
            _ => {
                return Err(Error::dim(format!(
                    "linear weight must be rank 2, got {ws:?}"
                )))
            }
        };
        if xs.last() != Some(&d_in) {
            return Err(Error::dim(format!("linear: input {xs:?} vs weight {ws:?}")));
        }
        let rows = x.numel() / d_in;
        let mut y = matmul_raw(x.data(), w.data(), rows, d_in, d_out);
        let b = bias.map(|b| b.value());
        if let Some(b) = &b {
            if b.shape() != [d_out] {
                return Err(Error::dim(format!(
                    "linear bias {:?} vs out {d_out}",
                    b.shape()
                )));
            }
            for row in y.chunks_mut(d_out) {
                for (o, &bv) in row.iter_mut().zip(b.data()) {
                    *o += bv;
                }
            }
        }
        let mut out_shape = xs.clone();
        *out_shape.last_mut().unwrap() = d_out;
        let out = Tensor::new(&out_shape, y)?;
        let mut parents = vec![self, weight];
        let has_bias = bias.is_some();
        if let Some(bv) = bias {
            parents.push(bv);
        }
        Ok(self.tape().push(out, &parents, move |g| {
            let dx = matmul_nt(g.data(), w.data(), rows, d_out, d_in);
            let dw = matmul_tn(x.data(), g.data(), d_in, rows, d_out);
            let mut grads = vec![
                Some(Tensor::new(&xs, dx).unwrap()),
                Some(Tensor::new(&[d_in, d_out], dw).unwrap()),
            ];
            if has_bias {
                let mut db = vec![T::zero(); d_out];
                for row in g.data().chunks(d_out) {
                    for (o, &gv) in db.iter_mut().zip(row) {
                        *o += gv;
                    }
                }
                grads.push(Some(Tensor::new(&[d_out], db).unwrap()));
            }
            grads
        }))
    }
}
