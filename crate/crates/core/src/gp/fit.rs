use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::likelihood::ReplicatedData;
use super::nelder_mead::minimize;
use super::{sample_variance, GpFit, KernelParams, TrainingSet};
use crate::error::Result;

/// Below this many observations the initial hyperparameters are used as-is.
pub const MIN_OBSERVATIONS_FOR_FIT: usize = 3;

/// Search box for maximum-likelihood estimation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperparameterBounds {
    pub lengthscale: (f64, f64),
    pub scale: (f64, f64),
    pub noise: (f64, f64),
}

const VARIANCE_FLOOR: f64 = 1e-8;

impl HyperparameterBounds {
    /// Lengthscales in `[0.05, 10]`, scale within `[1e-4, 100]` times the
    /// response variance, relative noise in `[1e-6, 100]`.
    pub fn for_responses(responses: &[f64]) -> Self {
        let var = sample_variance(responses).max(VARIANCE_FLOOR);
        HyperparameterBounds {
            lengthscale: (0.05, 10.0),
            scale: (1e-4 * var, 100.0 * var),
            noise: (1e-6, 100.0),
        }
    }

    pub fn clamp_scale(&self, v: f64) -> f64 {
        if v.is_nan() {
            return self.scale.0;
        }
        v.clamp(self.scale.0, self.scale.1)
    }

    pub fn clamp_noise(&self, v: f64) -> f64 {
        if v.is_nan() {
            return self.noise.0;
        }
        v.clamp(self.noise.0, self.noise.1)
    }
}

/// Multi-start settings for the likelihood search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Number of local searches; the first starts exactly at the initial
    /// values, the rest at log-normal perturbations of them.
    pub restarts: usize,
    /// Objective evaluations allowed per local search.
    pub max_evals: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 5,
            max_evals: 200,
            seed: 0,
        }
    }
}

const RESTART_SPREAD: f64 = 0.5;
const SIMPLEX_STEP: f64 = 0.5;
const TOLERANCE: f64 = 1e-9;

/// Empirical-Bayes fit. Optimizes log-lengthscales and log-noise with the
/// scale profiled in closed form; never returns parameters whose likelihood
/// is below that of `init`.
pub fn fit_hyperparameters(
    training: &TrainingSet,
    init: &KernelParams,
    options: &FitOptions,
) -> Result<GpFit> {
    let init_fit = GpFit::with_flag(training.clone(), init.clone(), false)?;
    if training.len() < MIN_OBSERVATIONS_FOR_FIT || options.restarts == 0 {
        return Ok(init_fit);
    }

    let bounds = HyperparameterBounds::for_responses(training.responses());
    let data = ReplicatedData::new(training);
    let dim = training.dim();

    let mut lower = vec![bounds.lengthscale.0.ln(); dim];
    lower.push(bounds.noise.0.ln());
    let mut upper = vec![bounds.lengthscale.1.ln(); dim];
    upper.push(bounds.noise.1.ln());

    let mut start: Vec<f64> = init.lengthscales.iter().map(|l| l.ln()).collect();
    start.push(init.noise.max(bounds.noise.0).ln());

    let objective = |theta: &[f64]| -> f64 {
        let ls: Vec<f64> = theta[..dim].iter().map(|t| t.exp()).collect();
        match data.profile(&ls, theta[dim].exp(), &bounds) {
            Some((lml, _)) => -lml,
            None => f64::INFINITY,
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let jitter = Normal::new(0.0, RESTART_SPREAD).expect("valid spread");
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for restart in 0..options.restarts {
        let x0: Vec<f64> = if restart == 0 {
            start.clone()
        } else {
            start.iter().map(|s| s + jitter.sample(&mut rng)).collect()
        };
        let res = minimize(
            objective,
            &x0,
            SIMPLEX_STEP,
            &lower,
            &upper,
            options.max_evals,
            TOLERANCE,
        );
        if best.as_ref().is_none_or(|b| res.value < b.1) {
            best = Some((res.x, res.value, res.converged));
        }
    }

    let Some((theta, value, converged)) = best else {
        return Ok(init_fit);
    };
    if !value.is_finite() {
        return Ok(init_fit);
    }
    let lengthscales: Vec<f64> = theta[..dim].iter().map(|t| t.exp()).collect();
    let noise = theta[dim].exp();
    let Some((_, scale)) = data.profile(&lengthscales, noise, &bounds) else {
        return Ok(init_fit);
    };
    let params = KernelParams {
        lengthscales,
        scale,
        noise,
    };
    match GpFit::with_flag(training.clone(), params, converged) {
        Ok(fit) if fit.log_marginal_likelihood() >= init_fit.log_marginal_likelihood() => Ok(fit),
        _ => Ok(init_fit),
    }
}
