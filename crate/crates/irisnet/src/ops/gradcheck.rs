//! Central-difference gradient verification.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Compares an analytic gradient against central finite differences of `f`
/// at `input`, coordinate by coordinate. Returns the worst relative error
/// `|a - n| / max(|a|, |n|, 1e-8)` over all coordinates.
pub fn finite_difference_check(
    mut f: impl FnMut(&Tensor) -> Result<f64>,
    input: &Tensor,
    analytic: &Tensor,
    step: f64,
) -> Result<f64> {
    if analytic.shape() != input.shape() {
        return Err(Error::ShapeMismatch {
            left: analytic.shape().to_vec(),
            right: input.shape().to_vec(),
        });
    }
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::NonFinite { context: "finite_difference_check step" });
    }
    let mut worst = 0.0f64;
    for coord in 0..input.len() {
        let mut plus = input.clone();
        plus.data_mut()[coord] += step;
        let mut minus = input.clone();
        minus.data_mut()[coord] -= step;
        let fp = f(&plus)?;
        let fm = f(&minus)?;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite { context: "finite_difference_check probe" });
        }
        let numeric = (fp - fm) / (2.0 * step);
        let ana = analytic.data()[coord];
        let rel = (ana - numeric).abs() / ana.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
