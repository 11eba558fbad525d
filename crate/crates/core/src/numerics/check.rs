use alloc::vec::Vec;

use super::Tensor;
use crate::error::{Error, Result};

/// Compares `analytic` gradients of `f` at `params` against central
/// differences and returns the largest
/// `|analytic - numeric| / max(1, |analytic|)` over all coordinates.
pub fn finite_diff_check<F>(mut f: F, params: &[Tensor], analytic: &[Tensor], epsilon: f64) -> Result<f64>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::Epsilon(epsilon));
    }
    if analytic.len() != params.len() {
        return Err(Error::Shape {
            op: "finite_diff_check",
            left: alloc::vec![params.len()],
            right: alloc::vec![analytic.len()],
        });
    }
    for (p, a) in params.iter().zip(analytic) {
        if p.shape() != a.shape() {
            return Err(super::tensor::shape_error("finite_diff_check", p, a));
        }
    }
    let first = f(params)?;
    let second = f(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let mut work: Vec<Tensor> = params.to_vec();
    let mut worst: f64 = 0.0;
    for t in 0..params.len() {
        for k in 0..params[t].len() {
            let orig = params[t].data()[k];
            work[t].data_mut()[k] = orig + epsilon;
            let up = f(&work)?;
            work[t].data_mut()[k] = orig - epsilon;
            let down = f(&work)?;
            work[t].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            let a = analytic[t].data()[k];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
