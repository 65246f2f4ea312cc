use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Outcome of a finite-difference gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `max_j |analytic_j - numeric_j| / (|analytic_j| + 1e-8)`
    pub max_rel_error: f64,
    /// Coordinate attaining the maximum.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares the reverse-mode gradient of the scalar built by `f` against
/// central differences with step `eps`.
///
/// `f` receives a fresh graph and the input leaf and must return a scalar.
/// Run it on `Graph<f64>` for a meaningful comparison; in `f32` the
/// difference quotient loses most of its digits to cancellation. Perturbed
/// points are rounded to `T` and the quotient divides by the step actually
/// taken.
pub fn grad_check<T, F>(f: F, point: &Tensor<T>, eps: f64) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("finite-difference step must be > 0, got {eps}")));
    }
    let mut g = Graph::<T>::default();
    let x = g.param(point.clone());
    let y = f(&mut g, x)?;
    let grads = g.backward(y)?;
    let analytic: Vec<f64> = match grads.get(x) {
        Some(t) => t.data().iter().map(|v| v.as_f64()).collect(),
        None => vec![0.0; point.len()],
    };

    let eval = |p: Tensor<T>| -> Result<f64> {
        let mut g = Graph::<T>::default();
        let x = g.constant(p);
        let y = f(&mut g, x)?;
        Ok(g.value(y).item()?.as_f64())
    };

    let mut numeric = Vec::with_capacity(point.len());
    for j in 0..point.len() {
        let base = point.data()[j].as_f64();
        let hi = T::of(base + eps);
        let lo = T::of(base - eps);
        let mut p = point.clone();
        p.data_mut()[j] = hi;
        let f_hi = eval(p.clone())?;
        p.data_mut()[j] = lo;
        let f_lo = eval(p)?;
        let step = (hi - lo).as_f64();
        numeric.push((f_hi - f_lo) / step);
    }

    let (worst_index, max_rel_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / (a.abs() + 1e-8))
        .enumerate()
        .fold((0, 0.0f64), |best, (i, e)| if e > best.1 { (i, e) } else { best });

    Ok(GradCheckReport {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    })
}
