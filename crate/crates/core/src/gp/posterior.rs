use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::kernel::sq_exp;
use super::{GpFit, InputPoint, PosteriorMoments};
use crate::error::{invalid, numeric, Result};

/// Negative variances down to this multiple of the scale are rounding noise.
const NEGATIVE_VARIANCE_TOLERANCE: f64 = 1e-8;

/// Whitened cross-covariances `L^{-1} c(x)` for each query, as columns.
fn whitened_cross(fit: &GpFit, queries: &[InputPoint]) -> Result<DMatrix<f64>> {
    let dim = fit.dim();
    if let Some(q) = queries.iter().find(|q| q.dim() != dim) {
        return Err(invalid(format!(
            "query has dimension {} but the fit expects {dim}",
            q.dim()
        )));
    }
    let params = fit.params();
    let train = fit.training().points();
    let cross = DMatrix::from_fn(train.len(), queries.len(), |i, j| {
        params.scale * sq_exp(train[i].coords(), queries[j].coords(), &params.lengthscales)
    });
    fit.factor()
        .solve_lower_triangular(&cross)
        .ok_or_else(|| numeric("triangular solve failed"))
}

/// Posterior mean and latent-function variance at each query.
///
/// `mu = beta + c^T S^{-1} (y - beta)` and
/// `var = nu - c^T S^{-1} c + (1 - c^T S^{-1} 1)^2 / (1^T S^{-1} 1)`
/// with `S = nu (K + tau2 I)` and `c = nu k(x)`; the last term is the
/// variance contributed by estimating the constant mean.
pub fn posterior_moments(fit: &GpFit, queries: &[InputPoint]) -> Result<PosteriorMoments> {
    if queries.is_empty() {
        return Err(invalid("no query points"));
    }
    let v = whitened_cross(fit, queries)?;
    let params = fit.params();
    let train = fit.training().points();
    let precision_sum = fit.precision_sum();
    let mut mean = Vec::with_capacity(queries.len());
    let mut variance = Vec::with_capacity(queries.len());
    for (j, q) in queries.iter().enumerate() {
        let col = v.column(j);
        let mut mu = fit.mean;
        for (i, p) in train.iter().enumerate() {
            mu += params.scale * sq_exp(p.coords(), q.coords(), &params.lengthscales) * fit.weights[i];
        }
        let explained = col.norm_squared();
        let beta_term = 1.0 - col.dot(&fit.whitened_ones);
        let var = params.scale - explained + beta_term * beta_term / precision_sum;
        mean.push(mu);
        variance.push(clamp_variance(var, params.scale)?);
    }
    Ok(PosteriorMoments { mean, variance })
}

fn clamp_variance(var: f64, scale: f64) -> Result<f64> {
    if !var.is_finite() {
        return Err(numeric("non-finite posterior variance"));
    }
    if var >= 0.0 {
        Ok(var)
    } else if var >= -NEGATIVE_VARIANCE_TOLERANCE * scale.max(1.0) {
        Ok(0.0)
    } else {
        Err(numeric(format!("posterior variance {var} is negative")))
    }
}

/// Joint posterior covariance of the latent function over the queries.
pub fn posterior_covariance(fit: &GpFit, queries: &[InputPoint]) -> Result<DMatrix<f64>> {
    if queries.is_empty() {
        return Err(invalid("no query points"));
    }
    let v = whitened_cross(fit, queries)?;
    let params = fit.params();
    let beta_terms: DVector<f64> = v.tr_mul(&fit.whitened_ones).map(|x| 1.0 - x);
    let precision_sum = fit.precision_sum();
    let explained = v.tr_mul(&v);
    let q = queries.len();
    let cov = DMatrix::from_fn(q, q, |i, j| {
        params.scale * sq_exp(queries[i].coords(), queries[j].coords(), &params.lengthscales)
            - explained[(i, j)]
            + beta_terms[i] * beta_terms[j] / precision_sum
    });
    if cov.iter().any(|c| !c.is_finite()) {
        return Err(numeric("non-finite posterior covariance"));
    }
    Ok((&cov + cov.transpose()) * 0.5)
}

/// `samples` joint draws of the latent function over `queries`, one row per
/// draw. Identical queries receive identical columns. Deterministic in `seed`.
pub fn sample_posterior(
    fit: &GpFit,
    queries: &[InputPoint],
    samples: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if samples == 0 {
        return Err(invalid("sample count must be at least one"));
    }
    let mut distinct: Vec<InputPoint> = Vec::new();
    let index: Vec<usize> = queries
        .iter()
        .map(|q| match distinct.iter().position(|d| d.coords() == q.coords()) {
            Some(i) => i,
            None => {
                distinct.push(q.clone());
                distinct.len() - 1
            }
        })
        .collect();

    let moments = posterior_moments(fit, &distinct)?;
    let cov = posterior_covariance(fit, &distinct)?;
    let root = psd_root(cov, fit.params().scale)?;

    let m = distinct.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(samples, queries.len());
    let mut z = DVector::zeros(m);
    for s in 0..samples {
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(&mut rng);
        }
        let draw = &root * &z;
        for (col, &src) in index.iter().enumerate() {
            out[(s, col)] = moments.mean[src] + draw[src];
        }
    }
    Ok(out)
}

/// `A` with `A A^T = cov`, from the eigendecomposition with slightly
/// negative eigenvalues (rounding) set to zero.
fn psd_root(cov: DMatrix<f64>, scale: f64) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(cov);
    let floor = -NEGATIVE_VARIANCE_TOLERANCE * scale.max(1.0) * eig.eigenvalues.len().max(1) as f64;
    if eig.eigenvalues.iter().any(|&l| l < floor) {
        return Err(numeric("posterior covariance is not positive semidefinite"));
    }
    let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let mut root = eig.eigenvectors;
    for (j, s) in sqrt_vals.iter().enumerate() {
        root.column_mut(j).scale_mut(*s);
    }
    Ok(root)
}
