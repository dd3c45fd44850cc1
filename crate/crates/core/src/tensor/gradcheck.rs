use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

fn eval<F>(f: &F, x: &Tensor<f64>) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let out = f(&mut g, v)?;
    if g.value(out).numel() != 1 {
        return Err(Error::NonScalarLoss(g.shape(out).to_vec()));
    }
    let y = g.value(out).item();
    if !y.is_finite() {
        return Err(Error::NonFinite("check_gradients: f(x ± eps)".into()));
    }
    Ok(y)
}

/// Central-difference gradient of the scalar function `f` at `x`.
pub fn finite_difference_gradient<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = eval(&f, &probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = eval(&f, &probe)?;
        probe.data_mut()[i] = orig;
        out.push((plus - minus) / (2.0 * eps));
    }
    Ok(out)
}

/// Largest relative disagreement between the reverse-mode gradient of `f`
/// at `x` and central differences with step `eps`:
/// `max_i |a_i − d_i| / max(|a_i|, |d_i|, 1e-12)`.
pub fn check_gradients<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let v = g.leaf(x.clone().with_requires_grad(true));
    let out = f(&mut g, v)?;
    if !g.value(out).all_finite() {
        return Err(Error::NonFinite("check_gradients: f(x)".into()));
    }
    g.backward(out)?;
    let analytic = g
        .grad(v)
        .map(|t| t.data().to_vec())
        .unwrap_or_else(|| vec![0.0; x.numel()]);
    let numeric = finite_difference_gradient(&f, x, eps)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, d)| (a - d).abs() / a.abs().max(d.abs()).max(1e-12))
        .fold(0.0, f64::max))
}
