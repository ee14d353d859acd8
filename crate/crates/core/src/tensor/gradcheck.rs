use super::Tensor;
use crate::error::{Error, Result};

/// Largest relative disagreement between `analytic` gradients and central
/// differences of `loss` around `params`.
///
/// The error for one entry is `|analytic − numeric| / max(1, |analytic|)`.
pub fn grad_check<F>(params: &[Tensor], analytic: &[Tensor], eps: f64, mut loss: F) -> Result<f64>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    if params.len() != analytic.len() {
        return Err(Error::arg(format!(
            "{} parameters but {} gradients",
            params.len(),
            analytic.len()
        )));
    }
    for (p, g) in params.iter().zip(analytic) {
        if p.shape() != g.shape() {
            return Err(Error::dim("grad_check", p.shape(), g.shape()));
        }
    }
    let base = loss(params)?;
    if !base.is_finite() {
        return Err(Error::Numeric(format!("loss is {base} at the unperturbed point")));
    }

    let mut work = params.to_vec();
    let mut worst = 0.0f64;
    for t in 0..work.len() {
        for i in 0..work[t].len() {
            let original = work[t].data()[i];
            work[t].data_mut()[i] = original + eps;
            let up = loss(&work)?;
            work[t].data_mut()[i] = original - eps;
            let down = loss(&work)?;
            work[t].data_mut()[i] = original;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss perturbing parameter {t} entry {i}"
                )));
            }
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[t].data()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}
