use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::surface::SurfaceSpec;
use crate::error::{Error, Result};

/// Published optimum of one population stratum, kept for cross-checks and
/// copied into study manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimumRecord {
    pub stratum: usize,
    pub dose: [f64; 2],
    pub f_opt: f64,
    pub g_opt: f64,
    pub ses_f: f64,
    pub ses_g: f64,
}

/// Ground truth for a simulated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub efficacy: SurfaceSpec,
    pub toxicity: SurfaceSpec,
    pub noise_sd_f: f64,
    pub noise_sd_g: f64,
    /// Tolerable toxicity per population stratum.
    pub thresholds: Vec<f64>,
    /// Single threshold used by the covariate-free design.
    pub standard_threshold: f64,
    pub max_patients: usize,
    /// Expansion rate of the escalation region.
    pub rate: f64,
    /// Standardized covariate value of each population stratum.
    pub covariates: Vec<f64>,
    #[serde(default)]
    pub optima: Vec<OptimumRecord>,
}

impl ScenarioSpec {
    pub fn populations(&self) -> usize {
        self.thresholds.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.populations();
        if k == 0 {
            return Err(Error::Config(format!("scenario {}: no strata", self.name)));
        }
        if self.covariates.len() != k {
            return Err(Error::Config(format!(
                "scenario {}: {} covariate values for {k} strata",
                self.name,
                self.covariates.len()
            )));
        }
        if !(self.noise_sd_f >= 0.0 && self.noise_sd_g >= 0.0) {
            return Err(Error::Config(format!("scenario {}: noise must be nonnegative", self.name)));
        }
        self.efficacy.validate(k)?;
        self.toxicity.validate(k)?;
        Ok(())
    }

    pub fn efficacy(&self, dose: &[f64], stratum: usize) -> f64 {
        self.efficacy.eval(dose, stratum)
    }

    pub fn toxicity(&self, dose: &[f64], stratum: usize) -> f64 {
        self.toxicity.eval(dose, stratum)
    }

    pub fn is_toxic(&self, dose: &[f64], stratum: usize) -> bool {
        self.toxicity(dose, stratum) > self.thresholds[stratum]
    }

    /// Noisy `(y_f, y_g)` for one patient of population `stratum`.
    pub fn generate_response<R: Rng + ?Sized>(&self, dose: &[f64], stratum: usize, rng: &mut R) -> (f64, f64) {
        let f = self.efficacy(dose, stratum);
        let g = self.toxicity(dose, stratum);
        let ef = Normal::new(0.0, self.noise_sd_f).expect("validated noise").sample(rng);
        let eg = Normal::new(0.0, self.noise_sd_g).expect("validated noise").sample(rng);
        (f + ef, g + eg)
    }

    /// Grid dose minimizing the true efficacy among truly safe doses, with
    /// the lexicographically smallest dose winning ties.
    pub fn true_optimum(&self, grid: &[Vec<f64>], stratum: usize) -> Option<Vec<f64>> {
        let mut best: Option<(&Vec<f64>, f64)> = None;
        for d in grid {
            if self.is_toxic(d, stratum) {
                continue;
            }
            let v = self.efficacy(d, stratum);
            let better = match best {
                None => true,
                Some((bd, bv)) => v < bv || (v == bv && d.partial_cmp(bd) == Some(std::cmp::Ordering::Less)),
            };
            if better {
                best = Some((d, v));
            }
        }
        best.map(|(d, _)| d.clone())
    }
}

/// Adverse-event weighting for the burden score: type weights `w_c`,
/// grade weights `w_g` and the grade distribution assumed for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeWeights {
    pub type_weights: [f64; 8],
    pub grade_weights: [f64; 3],
    pub grade_probabilities: [f64; 3],
}

impl AeWeights {
    /// Insomnia, nausea and dry mouth weighted five times the other types;
    /// grade weight equal to the grade.
    pub fn sleep_apnea() -> Self {
        AeWeights {
            type_weights: [5.0, 5.0, 1.0, 1.0, 5.0, 1.0, 1.0, 1.0],
            grade_weights: [1.0, 2.0, 3.0],
            grade_probabilities: [0.10, 0.45, 0.45],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let total: f64 = self.grade_probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-12 || self.grade_probabilities.iter().any(|p| *p < 0.0) {
            return Err(Error::Config("grade probabilities must sum to one".into()));
        }
        if self.type_weights.iter().chain(&self.grade_weights).any(|w| *w <= 0.0) {
            return Err(Error::Config("AE weights must be positive".into()));
        }
        Ok(())
    }
}

/// `B = sum over reported events of w_c * w_g`; events are `(type, grade)`
/// with types `1..=8` and grades `1..=3`.
pub fn ae_burden_score(events: &[(usize, usize)], weights: &AeWeights) -> Result<f64> {
    events.iter().try_fold(0.0, |acc, &(c, g)| {
        if !(1..=8).contains(&c) || !(1..=3).contains(&g) {
            return Err(Error::InvalidArgument(format!("AE type {c} / grade {g} out of range")));
        }
        Ok(acc + weights.type_weights[c - 1] * weights.grade_weights[g - 1])
    })
}

/// Toxicity response scale for a burden score, `log(B + 0.5)`.
pub fn burden_to_toxicity(burden: f64) -> f64 {
    (burden + 0.5).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn burden_examples() {
        let w = AeWeights::sleep_apnea();
        w.validate().unwrap();
        assert_eq!(ae_burden_score(&[], &w).unwrap(), 0.0);
        assert_relative_eq!(burden_to_toxicity(0.0), -std::f64::consts::LN_2);
        let insomnia = ae_burden_score(&[(2, 2)], &w).unwrap();
        assert_eq!(insomnia, 10.0);
        assert_relative_eq!(burden_to_toxicity(insomnia), 10.5f64.ln());
        assert_eq!(ae_burden_score(&[(1, 1), (8, 3)], &w).unwrap(), 8.0);
        assert!(ae_burden_score(&[(9, 1)], &w).is_err());
    }
}
