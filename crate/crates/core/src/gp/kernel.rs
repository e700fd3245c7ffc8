use nalgebra::DMatrix;

use super::{InputPoint, KernelParams};
use crate::error::{invalid, numeric, Result};

/// Anisotropic squared-exponential correlation
/// `exp(-sum_m (a_m - b_m)^2 / (2 l_m^2))`.
pub fn kernel_value(a: &InputPoint, b: &InputPoint, params: &KernelParams) -> Result<f64> {
    let ls = &params.lengthscales;
    if a.dim() != b.dim() || a.dim() != ls.len() {
        return Err(invalid(format!(
            "dimension mismatch: {} vs {} with {} lengthscales",
            a.dim(),
            b.dim(),
            ls.len()
        )));
    }
    Ok(sq_exp(a.coords(), b.coords(), ls))
}

#[inline]
pub(crate) fn sq_exp(a: &[f64], b: &[f64], lengthscales: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((x, y), l) in a.iter().zip(b).zip(lengthscales) {
        let d = x - y;
        acc += d * d / (2.0 * l * l);
    }
    (-acc).exp()
}

/// `nu * (K + tau2 * I)` over the given points, without jitter.
pub fn build_covariance(points: &[InputPoint], params: &KernelParams) -> Result<DMatrix<f64>> {
    if points.is_empty() {
        return Err(invalid("covariance needs at least one point"));
    }
    let ls = &params.lengthscales;
    if points.iter().any(|p| p.dim() != ls.len()) {
        return Err(invalid("point dimension does not match lengthscales"));
    }
    let n = points.len();
    let mut cov = DMatrix::zeros(n, n);
    for i in 0..n {
        cov[(i, i)] = params.scale * (1.0 + params.noise);
        for j in 0..i {
            let v = params.scale * sq_exp(points[i].coords(), points[j].coords(), ls);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(numeric("covariance has non-finite entries"));
    }
    Ok(cov)
}
