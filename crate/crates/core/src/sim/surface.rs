use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A true response surface over two standardized doses, one parameter set
/// per population stratum. A single parameter set is shared by all strata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SurfaceSpec {
    /// `sign * N(d; mu_k, Sigma)`, the bivariate normal density.
    GaussianBumpMixture {
        sign: f64,
        means: Vec<[f64; 2]>,
        covariance: [[f64; 2]; 2],
    },
    /// `b0 + b1 d1 + b2 d2 + b3 d1 d2 + b4 d1^2 + b5 d2^2 + b6 d1^2 d2^2`.
    Polynomial { coefficients: Vec<[f64; 7]> },
}

impl SurfaceSpec {
    /// Number of distinct parameter sets.
    fn sets(&self) -> usize {
        match self {
            SurfaceSpec::GaussianBumpMixture { means, .. } => means.len(),
            SurfaceSpec::Polynomial { coefficients } => coefficients.len(),
        }
    }

    pub fn validate(&self, populations: usize) -> Result<()> {
        let n = self.sets();
        if n != 1 && n != populations {
            return Err(Error::Config(format!(
                "surface has {n} parameter sets for {populations} strata"
            )));
        }
        if let SurfaceSpec::GaussianBumpMixture { covariance, .. } = self {
            let c = Matrix2::new(covariance[0][0], covariance[0][1], covariance[1][0], covariance[1][1]);
            if c[(0, 1)] != c[(1, 0)] || c[(0, 0)] <= 0.0 || c.determinant() <= 0.0 {
                return Err(Error::Config("bump covariance must be symmetric positive definite".into()));
            }
        }
        Ok(())
    }

    /// Exact surface value for population `stratum`.
    pub fn eval(&self, dose: &[f64], stratum: usize) -> f64 {
        let pick = |n: usize| if n == 1 { 0 } else { stratum };
        let (d1, d2) = (dose[0], dose[1]);
        match self {
            SurfaceSpec::GaussianBumpMixture {
                sign,
                means,
                covariance,
            } => {
                let mu = means[pick(means.len())];
                let c = Matrix2::new(covariance[0][0], covariance[0][1], covariance[1][0], covariance[1][1]);
                let inv = c.try_inverse().expect("validated covariance");
                let x = Vector2::new(d1 - mu[0], d2 - mu[1]);
                let quad = (x.transpose() * inv * x)[(0, 0)];
                sign * (-0.5 * quad).exp() / (2.0 * std::f64::consts::PI * c.determinant().sqrt())
            }
            SurfaceSpec::Polynomial { coefficients } => {
                let b = coefficients[pick(coefficients.len())];
                b[0] + b[1] * d1 + b[2] * d2 + b[3] * d1 * d2 + b[4] * d1 * d1 + b[5] * d2 * d2 + b[6] * d1 * d1 * d2 * d2
            }
        }
    }
}
