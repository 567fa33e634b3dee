use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// `|a − n| / (|a| + |n| + 1e-12)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

/// Maximum relative error between the tape gradient of a scalar-valued graph
/// and its central difference, over every element of `x`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    let all: Vec<usize> = (0..x.numel()).collect();
    grad_check_sampled(f, x, h, &all)
}

/// As [`grad_check`], restricted to the listed element indices.
pub fn grad_check_sampled<F>(f: F, x: &Tensor<f64>, h: f64, indices: &[usize]) -> Result<f64>
where
    F: for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    if !(h > 0.0) {
        return Err(Error::Contract(format!("step h must be positive, got {h}")));
    }
    let tape = Tape::<f64>::new();
    let xv = tape.leaf(x.clone());
    let y = f(xv)?;
    tape.backward(y)?;
    let analytic = xv
        .grad()
        .ok_or_else(|| Error::Contract("input did not receive a gradient".into()))?;

    let eval = |probe: Tensor<f64>| -> Result<f64> {
        let t = Tape::<f64>::inference();
        Ok(f(t.constant(probe))?.value().item())
    };
    let mut worst = 0.0f64;
    for &i in indices {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        worst = worst.max(rel_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}
