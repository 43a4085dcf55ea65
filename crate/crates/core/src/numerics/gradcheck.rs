use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

/// Central-difference gradient oracle: (f(x+h·e) − f(x−h·e)) / 2h per
/// coordinate. Test-support code; O(2·rows·cols) evaluations of `f`.
pub fn finite_diff_grad<F>(mut f: F, point: &DenseMatrix, h: f64) -> Result<DenseMatrix>
where
    F: FnMut(&DenseMatrix) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("step h = {h}")));
    }
    let mut x = point.clone();
    let mut grad = DenseMatrix::zeros(point.rows(), point.cols());
    for i in 0..point.values().len() {
        let orig = x.values()[i];

        x.values_mut()[i] = orig + h;
        let fp = f(&x)?;
        x.values_mut()[i] = orig - h;
        let fm = f(&x)?;
        x.values_mut()[i] = orig;

        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite function value near coordinate {i}"
            )));
        }
        grad.values_mut()[i] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

/// Largest relative error between an analytic gradient and the oracle,
/// with an absolute floor so near-zero coordinates compare sanely.
pub fn max_rel_err(analytic: &DenseMatrix, numeric: &DenseMatrix) -> f64 {
    analytic
        .values()
        .iter()
        .zip(numeric.values())
        .map(|(&a, &n)| {
            let scale = a.abs().max(n.abs()).max(1e-6);
            (a - n).abs() / scale
        })
        .fold(0.0, f64::max)
}
