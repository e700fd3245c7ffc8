//! Gaussian-process surrogate with a constant mean and an anisotropic
//! squared-exponential kernel.
//!
//! The prior on a response surface is `GP(beta, nu * k(x, x'))` and the
//! observations carry a noise term `nu * tau2` on the diagonal, so the
//! training covariance is `nu * (K + tau2 * I)`. The constant mean is always
//! profiled out by generalized least squares, and predictions include the
//! extra variance coming from estimating it.

mod fit;
mod kernel;
mod likelihood;
mod nelder_mead;
mod posterior;

pub use fit::{fit_hyperparameters, FitOptions, HyperparameterBounds, MIN_OBSERVATIONS_FOR_FIT};
pub use kernel::{build_covariance, kernel_value};
pub use likelihood::{log_marginal_likelihood, ReplicatedData};
pub use nelder_mead::{minimize, NelderMeadResult};
pub use posterior::{posterior_covariance, posterior_moments, sample_posterior};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, numeric, Result};

/// A standardized dose combination followed by standardized covariate levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputPoint {
    coords: Vec<f64>,
    dose_dims: usize,
}

impl InputPoint {
    pub fn new(dose: &[f64], covariates: &[f64]) -> Result<Self> {
        let coords: Vec<f64> = dose.iter().chain(covariates).copied().collect();
        if let Some(bad) = coords.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(invalid(format!("coordinate {bad} outside [0, 1]")));
        }
        Ok(InputPoint {
            coords,
            dose_dims: dose.len(),
        })
    }

    /// A point with no covariate block.
    pub fn from_dose(dose: &[f64]) -> Result<Self> {
        Self::new(dose, &[])
    }

    pub fn dose(&self) -> &[f64] {
        &self.coords[..self.dose_dims]
    }

    pub fn covariates(&self) -> &[f64] {
        &self.coords[self.dose_dims..]
    }

    /// Concatenated coordinates, the GP input.
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// Kernel hyperparameters: one lengthscale per input coordinate, the
/// process scale `nu` and the relative noise `tau2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub lengthscales: Vec<f64>,
    pub scale: f64,
    pub noise: f64,
}

impl KernelParams {
    pub fn new(lengthscales: Vec<f64>, scale: f64, noise: f64) -> Result<Self> {
        let params = KernelParams {
            lengthscales,
            scale,
            noise,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengthscales.is_empty() {
            return Err(invalid("at least one lengthscale is required"));
        }
        if self.lengthscales.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(invalid("lengthscales must be positive and finite"));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(invalid("scale must be positive and finite"));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(invalid("noise must be nonnegative and finite"));
        }
        Ok(())
    }

    /// Starting values used before (and as the anchor of) likelihood
    /// maximization: every lengthscale is half the diagonal of the unit
    /// cube, `sqrt(dim) / 2`, the relative noise is the sample variance of
    /// the responses and the scale is its closed-form maximizer given those.
    pub fn initial(training: &TrainingSet) -> Self {
        let dim = training.dim();
        let bounds = HyperparameterBounds::for_responses(training.responses());
        let lengthscales = vec![(dim as f64).sqrt() / 2.0; dim];
        let noise = if training.len() >= 2 {
            bounds.clamp_noise(sample_variance(training.responses()))
        } else {
            1.0
        };
        let data = ReplicatedData::new(training);
        let scale = data
            .profile(&lengthscales, noise, &bounds)
            .map(|(_, nu)| nu)
            .unwrap_or(bounds.scale.1.min(1.0).max(bounds.scale.0));
        KernelParams {
            lengthscales,
            scale,
            noise,
        }
    }
}

/// Observed inputs and one response per input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    points: Vec<InputPoint>,
    responses: Vec<f64>,
}

impl TrainingSet {
    pub fn new(points: Vec<InputPoint>, responses: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("training set must contain at least one point"));
        }
        if points.len() != responses.len() {
            return Err(invalid(format!(
                "{} points but {} responses",
                points.len(),
                responses.len()
            )));
        }
        let dim = points[0].dim();
        if points.iter().any(|p| p.dim() != dim) {
            return Err(invalid("training points have inconsistent dimension"));
        }
        if responses.iter().any(|y| !y.is_finite()) {
            return Err(invalid("responses must be finite"));
        }
        Ok(TrainingSet { points, responses })
    }

    pub fn points(&self) -> &[InputPoint] {
        &self.points
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }
}

/// Posterior mean and variance at a list of query points.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMoments {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl PosteriorMoments {
    pub fn sd(&self, i: usize) -> f64 {
        self.variance[i].sqrt()
    }
}

/// A fitted surface: training data, hyperparameters, the GLS mean and the
/// cached Cholesky factor of `nu * (K + tau2 * I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GpFit {
    training: TrainingSet,
    params: KernelParams,
    mean: f64,
    factor: DMatrix<f64>,
    /// Diagonal jitter (relative to `nu`) needed for the factorization.
    jitter: f64,
    /// `S^{-1} (y - mean)` with `S` the scaled covariance.
    weights: DVector<f64>,
    /// `L^{-1} 1`.
    whitened_ones: DVector<f64>,
    lml: f64,
    converged: bool,
}

const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-4;

impl GpFit {
    /// Conditions the GP on `training` at fixed hyperparameters.
    pub fn new(training: TrainingSet, params: KernelParams) -> Result<Self> {
        Self::with_flag(training, params, false)
    }

    pub(crate) fn with_flag(
        training: TrainingSet,
        params: KernelParams,
        converged: bool,
    ) -> Result<Self> {
        params.validate()?;
        if params.lengthscales.len() != training.dim() {
            return Err(invalid(format!(
                "{} lengthscales for {}-dimensional inputs",
                params.lengthscales.len(),
                training.dim()
            )));
        }
        let cov = build_covariance(training.points(), &params)?;
        let (chol, jitter) = factorize(&cov, params.scale)?;
        let factor = chol.l();
        let n = training.len();

        let whitened_ones = solve_lower(&factor, &DVector::from_element(n, 1.0));
        let y = DVector::from_column_slice(training.responses());
        let whitened_y = solve_lower(&factor, &y);
        let precision_sum = whitened_ones.norm_squared();
        let mean = whitened_ones.dot(&whitened_y) / precision_sum;

        let resid = y.add_scalar(-mean);
        let weights = chol.solve(&resid);
        let quad = resid.dot(&weights);
        let log_det: f64 = factor.diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
        let lml = -0.5 * quad - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        if !lml.is_finite() || !mean.is_finite() {
            return Err(numeric("non-finite likelihood or mean"));
        }
        Ok(GpFit {
            training,
            params,
            mean,
            factor,
            jitter,
            weights,
            whitened_ones,
            lml,
            converged,
        })
    }

    pub fn training(&self) -> &TrainingSet {
        &self.training
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    /// The GLS estimate of the constant mean.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Lower-triangular factor of the (jittered) scaled covariance.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.lml
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// `1^T S^{-1} 1` for the scaled covariance `S`.
    pub fn precision_sum(&self) -> f64 {
        self.whitened_ones.norm_squared()
    }

    pub fn dim(&self) -> usize {
        self.training.dim()
    }
}

/// Cholesky with escalating diagonal jitter, `1e-8 * nu` up to `1e-4 * nu`.
pub(crate) fn factorize(
    cov: &DMatrix<f64>,
    scale: f64,
) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(chol) = Cholesky::new(cov.clone()) {
        return Ok((chol, 0.0));
    }
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * (1.0 + 1e-12) {
        let mut jittered = cov.clone();
        for i in 0..jittered.nrows() {
            jittered[(i, i)] += jitter * scale;
        }
        if let Some(chol) = Cholesky::new(jittered) {
            return Ok((chol, jitter));
        }
        jitter *= 10.0;
    }
    Err(numeric("covariance is not positive definite after maximal jitter"))
}

pub(crate) fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.solve_lower_triangular(b)
        .expect("Cholesky factor has a positive diagonal")
}

pub(crate) fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}
