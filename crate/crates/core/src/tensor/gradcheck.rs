use super::{Graph, Tensor, Var};
use crate::error::{invalid, Error, Result};

/// Compares the autodiff gradient of a scalar function against central
/// finite differences, coordinate by coordinate.
///
/// Returns `max |a - n| / max(1e-12, |a| + |n|)` over all coordinates of `x`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    if eps <= 0.0 || !eps.is_finite() {
        return invalid(format!("grad_check: eps must be positive, got {eps}"));
    }
    let eval = |point: Tensor<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.constant(point);
        let out = f(&mut g, v)?;
        let y = g.value(out).item()?;
        if !y.is_finite() {
            return Err(Error::NonFinite { op: "grad_check" });
        }
        Ok(y)
    };

    let mut g = Graph::new();
    let v = g.param(x.clone());
    let out = f(&mut g, v)?;
    g.backward(out)?;
    let analytic = g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.len()]);

    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-12);
        worst = worst.max(err);
    }
    Ok(worst)
}
