use crate::tensor::{Scalar, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    /// Tanh approximation of GELU, used inside the transformer MLP.
    Gelu,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_A: f64 = 0.044_715;

fn gelu<T: Scalar>(x: T) -> T {
    let (c, a, half) = (T::of(GELU_C), T::of(GELU_A), T::of(0.5));
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let (c, a, half) = (T::of(GELU_C), T::of(GELU_A), T::of(0.5));
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let du = c * (T::one() + T::of(3.0) * a * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn activation(self, kind: Activation) -> Var<'t, T> {
        match kind {
            Activation::Relu => self.relu(),
            Activation::Tanh => self.tanh(),
            Activation::Gelu => self.gelu(),
        }
    }

    pub fn relu(self) -> Var<'t, T> {
        let x = self.value();
        let out = x.map(|v| if v > T::zero() { v } else { T::zero() });
        self.tape().push(out, &[self], move |g| {
            vec![Some(
                g.zip_map(&x, |gv, xv| if xv > T::zero() { gv } else { T::zero() })
                    .unwrap(),
            )]
        })
    }

    /// Rounded into the open interval, so `|y| < 1` even where `tanh` saturates.
    pub fn tanh(self) -> Var<'t, T> {
        let edge = T::one() - T::epsilon() / T::of(2.0);
        let y = std::sync::Arc::new(self.value().map(|v| v.tanh().max(-edge).min(edge)));
        let saved = y.clone();
        self.tape().push_shared(y, &[self], move |g| {
            vec![Some(
                g.zip_map(&saved, |gv, yv| gv * (T::one() - yv * yv))
                    .unwrap(),
            )]
        })
    }

    pub fn gelu(self) -> Var<'t, T> {
        let x = self.value();
        let out: Tensor<T> = x.map(gelu);
        self.tape().push(out, &[self], move |g| {
            vec![Some(g.zip_map(&x, |gv, xv| gv * gelu_grad(xv)).unwrap())]
        })
    }
}
