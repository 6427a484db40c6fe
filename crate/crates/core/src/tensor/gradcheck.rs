//! Central finite-difference gradient checking.

use super::{Graph, Real, Tensor, Var};
use crate::error::Result;

/// Numerical gradient of `f` at `x` by the fourth-order central stencil
/// `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`.
pub fn central_difference<T: Real>(
    mut f: impl FnMut(&Tensor<T>) -> Result<f64>,
    x: &Tensor<T>,
    h: f64,
) -> Result<Vec<f64>> {
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x.data()[i];
        let mut at = |offset: f64| {
            probe.data_mut()[i] = T::from_f64_lossy(orig.as_f64() + offset);
            f(&probe)
        };
        let (p2, p1, m1, m2) = (at(2.0 * h)?, at(h)?, at(-h)?, at(-2.0 * h)?);
        probe.data_mut()[i] = orig;
        grad.push((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h));
    }
    Ok(grad)
}

/// `max_i |a_i - n_i| / max(|a_i| + |n_i|, floor)` where
/// `floor = max(1e-8, 1e-3 * max_j |n_j|)`. The floor keeps components that
/// are zero up to rounding from dividing noise by noise.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-8);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (a.abs() + n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Builds the scalar function `build(graph, x)` once for the reverse-mode
/// gradient and repeatedly for central differences, returning the maximum
/// relative disagreement.
pub fn finite_difference_check<T: Real>(
    build: impl Fn(&mut Graph<T>, Var) -> Result<Var>,
    x: &Tensor<T>,
    h: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let xv = g.leaf(x.clone(), true);
    let out = build(&mut g, xv)?;
    let grads = g.backward(out)?;
    let analytic: Vec<f64> = grads
        .get(xv)
        .expect("leaf marked differentiable")
        .data()
        .iter()
        .map(|v| v.as_f64())
        .collect();
    let numeric = central_difference(
        |p| {
            let mut g = Graph::new();
            let pv = g.leaf(p.clone(), false);
            let out = build(&mut g, pv)?;
            Ok(g.scalar_value(out)?.as_f64())
        },
        x,
        h,
    )?;
    Ok(max_relative_error(&analytic, &numeric))
}
