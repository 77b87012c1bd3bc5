//! Central finite-difference gradient check.

use super::matrix::Matrix;
use super::NumError;

pub const MIN_EPS: f64 = 1e-6;
pub const MAX_EPS: f64 = 1e-2;

/// Compares analytic gradients against central differences.
///
/// `loss` maps a parameter list to `(value, gradients)`, one gradient per
/// parameter with matching shape. Returns the largest
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)` over every entry.
pub fn grad_check<F>(loss: F, params: &[Matrix], eps: f64) -> Result<f64, NumError>
where
    F: Fn(&[Matrix]) -> Result<(f64, Vec<Matrix>), NumError>,
{
    if !(MIN_EPS..=MAX_EPS).contains(&eps) {
        return Err(NumError::BadEpsilon(eps));
    }
    let (base, analytic) = loss(params)?;
    let (again, _) = loss(params)?;
    if base.to_bits() != again.to_bits() {
        return Err(NumError::NonDeterministicLoss { first: base, second: again });
    }
    if analytic.len() != params.len() {
        return Err(NumError::ShapeMismatch {
            op: "grad_check",
            left: (params.len(), 1),
            right: (analytic.len(), 1),
        });
    }

    let mut work: Vec<Matrix> = params.to_vec();
    let mut worst = 0.0f64;
    for (p, grad) in analytic.iter().enumerate() {
        if grad.shape() != params[p].shape() {
            return Err(NumError::ShapeMismatch {
                op: "grad_check",
                left: params[p].shape(),
                right: grad.shape(),
            });
        }
        for i in 0..params[p].data().len() {
            let original = params[p].data()[i];
            work[p].data_mut()[i] = original + eps;
            let (plus, _) = loss(&work)?;
            work[p].data_mut()[i] = original - eps;
            let (minus, _) = loss(&work)?;
            work[p].data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[i];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
