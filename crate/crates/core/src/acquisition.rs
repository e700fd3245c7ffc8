//! Constrained expected improvement over a finite candidate grid.
//!
//! A dose is safe when `P(g <= threshold | data) > confidence`. The
//! incumbent is the smallest efficacy posterior mean over the safe doses, or
//! the efficacy mean at the dose most likely to be safe when none is. The
//! acquisition value is the usual expected improvement below the incumbent
//! multiplied by the probability of satisfying the toxicity constraint.
//!
//! Ties in every argmax/argmin are broken towards the lexicographically
//! smallest dose vector, so results do not depend on candidate order.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::gp::{posterior_moments, sample_posterior, GpFit, InputPoint, PosteriorMoments};
use crate::normal;
use crate::seeds::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetySpec {
    /// Tolerable toxicity on the toxicity response scale.
    pub threshold: f64,
    /// Posterior probability required for a dose to count as safe.
    pub confidence: f64,
}

impl SafetySpec {
    pub fn new(threshold: f64, confidence: f64) -> Result<Self> {
        if !(confidence > 0.0 && confidence < 1.0) {
            return Err(invalid("safety confidence must lie in (0, 1)"));
        }
        if threshold.is_nan() {
            return Err(invalid("toxicity threshold is NaN"));
        }
        Ok(SafetySpec {
            threshold,
            confidence,
        })
    }
}

/// Dose combinations to score for one stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub doses: Vec<Vec<f64>>,
    pub stratum: usize,
    /// Standardized covariate pattern of the stratum (empty for the
    /// covariate-free design).
    pub covariates: Vec<f64>,
}

impl CandidateSet {
    pub fn new(doses: Vec<Vec<f64>>, stratum: usize, covariates: Vec<f64>) -> Result<Self> {
        if doses.is_empty() {
            return Err(invalid("candidate set is empty"));
        }
        Ok(CandidateSet {
            doses,
            stratum,
            covariates,
        })
    }

    pub fn points(&self) -> Result<Vec<InputPoint>> {
        self.doses
            .iter()
            .map(|d| InputPoint::new(d, &self.covariates))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionResult {
    pub best_dose: Vec<f64>,
    pub best_value: f64,
    pub incumbent: f64,
    pub safe_set: Vec<Vec<f64>>,
    pub fallback_used: bool,
}

/// `P(g <= threshold)` for `g ~ N(mean, sd^2)`; a point mass when `sd == 0`.
pub fn safety_from_moments(mean: f64, sd: f64, threshold: f64) -> f64 {
    if sd > 0.0 {
        normal::cdf((threshold - mean) / sd)
    } else if mean <= threshold {
        1.0
    } else {
        0.0
    }
}

/// Expected improvement `E[max(0, incumbent - f)]` for `f ~ N(mean, sd^2)`.
pub fn expected_improvement(mean: f64, sd: f64, incumbent: f64) -> f64 {
    let gap = incumbent - mean;
    if sd > 0.0 {
        let u = gap / sd;
        (gap * normal::cdf(u) + sd * normal::pdf(u)).max(0.0)
    } else {
        gap.max(0.0)
    }
}

/// Closed-form constrained EI under conditional independence of the two
/// surfaces.
pub fn constrained_ei_from_moments(
    mean_f: f64,
    sd_f: f64,
    mean_g: f64,
    sd_g: f64,
    incumbent: f64,
    threshold: f64,
) -> f64 {
    expected_improvement(mean_f, sd_f, incumbent) * safety_from_moments(mean_g, sd_g, threshold)
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    a.len().cmp(&b.len())
}

/// Indices of `doses` in lexicographic order.
fn lex_order(doses: &[Vec<f64>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..doses.len()).collect();
    idx.sort_by(|&i, &j| lex_cmp(&doses[i], &doses[j]));
    idx
}

/// Index maximizing `score`, lexicographically smallest dose on ties.
fn argmax_by(doses: &[Vec<f64>], indices: &[usize], mut score: impl FnMut(usize) -> f64) -> Option<usize> {
    let mut ordered = indices.to_vec();
    ordered.sort_by(|&i, &j| lex_cmp(&doses[i], &doses[j]));
    let mut best: Option<(usize, f64)> = None;
    for i in ordered {
        let s = score(i);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Both posteriors evaluated once over a candidate set.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePosterior {
    pub doses: Vec<Vec<f64>>,
    pub efficacy: PosteriorMoments,
    pub toxicity: PosteriorMoments,
}

impl CandidatePosterior {
    pub fn evaluate(f_fit: &GpFit, g_fit: &GpFit, candidates: &CandidateSet) -> Result<Self> {
        let points = candidates.points()?;
        Ok(CandidatePosterior {
            doses: candidates.doses.clone(),
            efficacy: posterior_moments(f_fit, &points)?,
            toxicity: posterior_moments(g_fit, &points)?,
        })
    }

    pub fn len(&self) -> usize {
        self.doses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doses.is_empty()
    }

    pub fn safety(&self, i: usize, threshold: f64) -> f64 {
        safety_from_moments(self.toxicity.mean[i], self.toxicity.sd(i), threshold)
    }

    pub fn cei(&self, i: usize, incumbent: f64, threshold: f64) -> f64 {
        constrained_ei_from_moments(
            self.efficacy.mean[i],
            self.efficacy.sd(i),
            self.toxicity.mean[i],
            self.toxicity.sd(i),
            incumbent,
            threshold,
        )
    }

    /// Indices of safe candidates, in candidate order.
    pub fn safe_indices(&self, spec: &SafetySpec) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.safety(i, spec.threshold) > spec.confidence)
            .collect()
    }

    /// `(incumbent, fallback_used)`.
    pub fn incumbent(&self, spec: &SafetySpec) -> (f64, bool) {
        let safe = self.safe_indices(spec);
        if !safe.is_empty() {
            let best = safe
                .iter()
                .map(|&i| self.efficacy.mean[i])
                .fold(f64::INFINITY, f64::min);
            return (best, false);
        }
        // safest dose; ties go to the lower efficacy mean, then lexicographic
        let all: Vec<usize> = (0..self.len()).collect();
        let top = all
            .iter()
            .map(|&i| self.safety(i, spec.threshold))
            .fold(f64::NEG_INFINITY, f64::max);
        let tied: Vec<usize> = all
            .into_iter()
            .filter(|&i| self.safety(i, spec.threshold) == top)
            .collect();
        let pick = argmax_by(&self.doses, &tied, |i| -self.efficacy.mean[i])
            .expect("candidate set is nonempty");
        (self.efficacy.mean[pick], true)
    }

    /// Index of the cEI maximizer together with the full result record.
    pub fn select(&self, spec: &SafetySpec) -> (usize, AcquisitionResult) {
        let all: Vec<usize> = (0..self.len()).collect();
        self.select_within(spec, &all)
    }

    /// Like [`select`](Self::select) but the maximization runs over
    /// `allowed` only. The incumbent and safe set still use every candidate.
    ///
    /// Panics if `allowed` is empty.
    pub fn select_within(&self, spec: &SafetySpec, allowed: &[usize]) -> (usize, AcquisitionResult) {
        let (incumbent, fallback_used) = self.incumbent(spec);
        let values: Vec<f64> = (0..self.len())
            .map(|i| self.cei(i, incumbent, spec.threshold))
            .collect();
        let best = argmax_by(&self.doses, allowed, |i| values[i]).expect("allowed set is nonempty");
        let mut safe_set: Vec<Vec<f64>> = self
            .safe_indices(spec)
            .into_iter()
            .map(|i| self.doses[i].clone())
            .collect();
        safe_set.sort_by(|a, b| lex_cmp(a, b));
        (
            best,
            AcquisitionResult {
                best_dose: self.doses[best].clone(),
                best_value: values[best],
                incumbent,
                safe_set,
                fallback_used,
            },
        )
    }

    /// Largest cEI value over the candidates.
    pub fn max_cei(&self, spec: &SafetySpec) -> f64 {
        let (incumbent, _) = self.incumbent(spec);
        (0..self.len())
            .map(|i| self.cei(i, incumbent, spec.threshold))
            .fold(0.0, f64::max)
    }

    /// Safe candidate with the smallest efficacy posterior mean.
    pub fn point_estimate(&self, spec: &SafetySpec) -> Option<usize> {
        let safe = self.safe_indices(spec);
        argmax_by(&self.doses, &safe, |i| -self.efficacy.mean[i])
    }
}

pub fn safety_probability(g_fit: &GpFit, dose: &InputPoint, threshold: f64) -> Result<f64> {
    let m = posterior_moments(g_fit, std::slice::from_ref(dose))?;
    Ok(safety_from_moments(m.mean[0], m.sd(0), threshold))
}

/// Candidates whose safety probability exceeds the confidence level.
pub fn safe_set(g_fit: &GpFit, candidates: &CandidateSet, spec: &SafetySpec) -> Result<Vec<Vec<f64>>> {
    let m = posterior_moments(g_fit, &candidates.points()?)?;
    Ok(candidates
        .doses
        .iter()
        .enumerate()
        .filter(|(i, _)| safety_from_moments(m.mean[*i], m.sd(*i), spec.threshold) > spec.confidence)
        .map(|(_, d)| d.clone())
        .collect())
}

/// `(incumbent value, fallback_used)`.
pub fn incumbent(
    f_fit: &GpFit,
    g_fit: &GpFit,
    candidates: &CandidateSet,
    spec: &SafetySpec,
) -> Result<(f64, bool)> {
    Ok(CandidatePosterior::evaluate(f_fit, g_fit, candidates)?.incumbent(spec))
}

pub fn constrained_ei(
    f_fit: &GpFit,
    g_fit: &GpFit,
    dose: &InputPoint,
    incumbent: f64,
    threshold: f64,
) -> Result<f64> {
    let q = std::slice::from_ref(dose);
    let f = posterior_moments(f_fit, q)?;
    let g = posterior_moments(g_fit, q)?;
    Ok(constrained_ei_from_moments(
        f.mean[0],
        f.sd(0),
        g.mean[0],
        g.sd(0),
        incumbent,
        threshold,
    ))
}

pub fn select_next_dose(
    f_fit: &GpFit,
    g_fit: &GpFit,
    candidates: &CandidateSet,
    spec: &SafetySpec,
) -> Result<AcquisitionResult> {
    let post = CandidatePosterior::evaluate(f_fit, g_fit, candidates)?;
    Ok(post.select(spec).1)
}

pub fn point_estimate_optimum(
    f_fit: &GpFit,
    g_fit: &GpFit,
    candidates: &CandidateSet,
    spec: &SafetySpec,
) -> Result<Option<Vec<f64>>> {
    let post = CandidatePosterior::evaluate(f_fit, g_fit, candidates)?;
    Ok(post.point_estimate(spec).map(|i| post.doses[i].clone()))
}

/// Draws from the posterior of the optimal dose. Each draw takes a joint
/// sample of both surfaces over the candidates, keeps the doses whose
/// sampled toxicity is at most the threshold and returns the one with the
/// smallest sampled efficacy; `None` marks draws with no admissible dose.
pub fn posterior_optimal_dose(
    f_fit: &GpFit,
    g_fit: &GpFit,
    candidates: &CandidateSet,
    spec: &SafetySpec,
    samples: usize,
    seed: u64,
) -> Result<Vec<Option<Vec<f64>>>> {
    let points = candidates.points()?;
    let f_draws = sample_posterior(f_fit, &points, samples, derive_seed(seed, &[0]))?;
    let g_draws = sample_posterior(g_fit, &points, samples, derive_seed(seed, &[1]))?;
    let order = lex_order(&candidates.doses);
    Ok((0..samples)
        .map(|s| {
            let mut best: Option<(usize, f64)> = None;
            for &i in &order {
                if g_draws[(s, i)] <= spec.threshold {
                    let v = f_draws[(s, i)];
                    if best.is_none_or(|(_, b)| v < b) {
                        best = Some((i, v));
                    }
                }
            }
            best.map(|(i, _)| candidates.doses[i].clone())
        })
        .collect())
}
