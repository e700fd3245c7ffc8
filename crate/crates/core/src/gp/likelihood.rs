use nalgebra::{Cholesky, DMatrix, DVector};

use super::fit::HyperparameterBounds;
use super::{GpFit, KernelParams, TrainingSet};
use crate::error::Result;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Log density of the responses under `N(beta_hat * 1, nu * (K + tau2 I))`
/// with the constant mean profiled out by GLS.
pub fn log_marginal_likelihood(training: &TrainingSet, params: &KernelParams) -> Result<f64> {
    Ok(GpFit::new(training.clone(), params.clone())?.log_marginal_likelihood())
}

/// Training data collapsed onto its distinct inputs.
///
/// Cohorts put several patients on the same input, so the full likelihood
/// can be evaluated exactly on the distinct inputs: the replicate means carry
/// covariance `nu * (K_u + tau2 * diag(1 / a_i))` and the within-input
/// deviations are independent with variance `nu * tau2`. The optimizer works
/// on this form; [`GpFit`] always uses the full matrix.
#[derive(Debug, Clone)]
pub struct ReplicatedData {
    counts: Vec<f64>,
    means: DVector<f64>,
    within_ss: f64,
    n: usize,
    /// One squared-difference matrix per input coordinate.
    sq_diffs: Vec<DMatrix<f64>>,
}

impl ReplicatedData {
    pub fn new(training: &TrainingSet) -> Self {
        let mut unique: Vec<&[f64]> = Vec::new();
        let mut groups: Vec<Vec<f64>> = Vec::new();
        for (p, &y) in training.points().iter().zip(training.responses()) {
            match unique.iter().position(|u| *u == p.coords()) {
                Some(i) => groups[i].push(y),
                None => {
                    unique.push(p.coords());
                    groups.push(vec![y]);
                }
            }
        }
        let counts: Vec<f64> = groups.iter().map(|g| g.len() as f64).collect();
        let means: Vec<f64> = groups
            .iter()
            .map(|g| g.iter().sum::<f64>() / g.len() as f64)
            .collect();
        let within_ss = groups
            .iter()
            .zip(&means)
            .map(|(g, m)| g.iter().map(|y| (y - m).powi(2)).sum::<f64>())
            .sum();
        let m = unique.len();
        let dim = training.dim();
        let sq_diffs = (0..dim)
            .map(|d| DMatrix::from_fn(m, m, |i, j| (unique[i][d] - unique[j][d]).powi(2)))
            .collect();
        ReplicatedData {
            counts,
            means: DVector::from_vec(means),
            within_ss,
            n: training.len(),
            sq_diffs,
        }
    }

    pub fn distinct_inputs(&self) -> usize {
        self.counts.len()
    }

    pub fn has_replicates(&self) -> bool {
        self.n > self.counts.len()
    }

    /// Quadratic form (with unit scale) and the `nu`-free part of the log
    /// determinant, or `None` when the collapsed matrix is not positive
    /// definite or replicates meet a zero nugget.
    fn components(&self, lengthscales: &[f64], noise: f64) -> Option<(f64, f64)> {
        if self.has_replicates() && noise <= 0.0 {
            return None;
        }
        let m = self.counts.len();
        let inv_two_l2: Vec<f64> = lengthscales.iter().map(|l| 0.5 / (l * l)).collect();
        let mut mat = DMatrix::zeros(m, m);
        for j in 0..m {
            for i in j..m {
                let mut acc = 0.0;
                for (sq, w) in self.sq_diffs.iter().zip(&inv_two_l2) {
                    acc += sq[(i, j)] * w;
                }
                let v = (-acc).exp();
                mat[(i, j)] = v;
                mat[(j, i)] = v;
            }
        }
        for i in 0..m {
            mat[(i, i)] += noise / self.counts[i];
        }
        let chol = Cholesky::new(mat)?;
        let l = chol.l_dirty();
        let ones = DVector::from_element(m, 1.0);
        let w1 = l.solve_lower_triangular(&ones)?;
        let wy = l.solve_lower_triangular(&self.means)?;
        let beta = w1.dot(&wy) / w1.norm_squared();
        let wr = wy - w1 * beta;
        let mut quad = wr.norm_squared();
        if self.has_replicates() {
            quad += self.within_ss / noise;
        }
        let mut log_det = 2.0 * (0..m).map(|i| l[(i, i)].ln()).sum::<f64>();
        log_det += self.counts.iter().map(|a| a.ln()).sum::<f64>();
        if self.n > m {
            log_det += (self.n - m) as f64 * noise.ln();
        }
        if !(quad.is_finite() && log_det.is_finite()) {
            return None;
        }
        Some((quad, log_det))
    }

    /// Full-data log marginal likelihood at an explicit scale.
    pub fn lml_at(&self, lengthscales: &[f64], scale: f64, noise: f64) -> Option<f64> {
        let (quad, log_det) = self.components(lengthscales, noise)?;
        let n = self.n as f64;
        Some(-0.5 * quad / scale - 0.5 * (n * scale.ln() + log_det) - 0.5 * n * LN_2PI)
    }

    /// Log marginal likelihood with the scale set to its closed-form
    /// maximizer `Q / n`, clamped to the bounds. Returns `(lml, scale)`.
    pub fn profile(
        &self,
        lengthscales: &[f64],
        noise: f64,
        bounds: &HyperparameterBounds,
    ) -> Option<(f64, f64)> {
        let (quad, log_det) = self.components(lengthscales, noise)?;
        let n = self.n as f64;
        let scale = bounds.clamp_scale(quad / n);
        let lml = -0.5 * quad / scale - 0.5 * (n * scale.ln() + log_det) - 0.5 * n * LN_2PI;
        Some((lml, scale))
    }
}
