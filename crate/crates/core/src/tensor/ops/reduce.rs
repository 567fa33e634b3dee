use crate::tensor::{Scalar, Tensor, Var};

impl<'t, T: Scalar> Var<'t, T> {
    /// Sum of all elements as a scalar, accumulated in index order.
    pub fn sum(self) -> Var<'t, T> {
        let a = self.value();
        let shape = a.shape().to_vec();
        let out = Tensor::scalar(a.sum());
        self.tape().push(out, &[self], move |g| {
            vec![Some(Tensor::full(&shape, g.item()))]
        })
    }

    pub fn mean(self) -> Var<'t, T> {
        let a = self.value();
        let shape = a.shape().to_vec();
        let n = T::of(a.numel() as f64);
        let out = Tensor::scalar(a.sum() / n);
        self.tape().push(out, &[self], move |g| {
            vec![Some(Tensor::full(&shape, g.item() / n))]
        })
    }
}
