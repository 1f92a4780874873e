use crate::error::{Error, Result};

use super::Tensor;

/// Compares the analytic gradient of a scalar function against central
/// differences at `point`.
///
/// `f` returns the function value and its analytic gradient. The result is
/// `max_j |analytic_j - numeric_j| / max(1, |analytic_j|)`.
pub fn grad_check<F>(mut f: F, point: &Tensor, eps: f32) -> Result<f64>
where
    F: FnMut(&Tensor) -> Result<(f64, Tensor)>,
{
    if !(1e-5..=1e-2).contains(&eps) {
        return Err(Error::Config(format!("grad_check step {eps} outside [1e-5, 1e-2]")));
    }
    let (value, analytic) = f(point)?;
    if !value.is_finite() || !analytic.all_finite() {
        return Err(Error::Numeric("non-finite value or gradient at the base point".into()));
    }
    analytic.expect_shape(point, "grad_check")?;

    let mut probe = point.clone();
    let mut worst = 0f64;
    for j in 0..point.numel() {
        let x = point.data()[j];
        let (hi, lo) = (x + eps, x - eps);
        probe.data_mut()[j] = hi;
        let (f_hi, _) = f(&probe)?;
        probe.data_mut()[j] = lo;
        let (f_lo, _) = f(&probe)?;
        probe.data_mut()[j] = x;
        if !f_hi.is_finite() || !f_lo.is_finite() {
            return Err(Error::Numeric(format!("non-finite value while probing coordinate {j}")));
        }
        let numeric = (f_hi - f_lo) / (hi as f64 - lo as f64);
        let a = analytic.data()[j] as f64;
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}
