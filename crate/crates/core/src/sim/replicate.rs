use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::scenario::ScenarioSpec;
use crate::error::Result;
use crate::gp::FitOptions;
use crate::seeds::derive_seed;
use crate::trial::{
    Initialization, ObservationBatch, PointEstimate, Response, StratumConfig, StratumStatus, Trial, TrialConfig,
};

const TRIAL_STREAM: u64 = 10;
const RESPONSE_STREAM: u64 = 11;
const RPSEL_STREAM: u64 = 12;

type Frozen = (Option<PointEstimate>, Option<f64>, Option<f64>);

/// An algorithm setting to run against a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub name: String,
    /// One engine stratum per population stratum when true; otherwise a
    /// single covariate-free stratum whose cohorts mix the populations.
    pub personalized: bool,
    /// Patients per evaluated dose.
    pub replication: usize,
    #[serde(default)]
    pub efficacy_stop_threshold: f64,
    #[serde(default)]
    pub initialization: Initialization,
    #[serde(default)]
    pub max_patients: Option<usize>,
    #[serde(default)]
    pub safety_confidence: Option<f64>,
    #[serde(default)]
    pub fit: Option<FitOptions>,
}

impl DesignSpec {
    pub fn trial_config(&self, scenario: &ScenarioSpec, seed: u64) -> TrialConfig {
        let stratum = |covariates: Vec<f64>, threshold: f64| StratumConfig {
            covariates,
            toxicity_threshold: threshold,
            safety_confidence: self.safety_confidence.unwrap_or(0.9),
            efficacy_stop_threshold: self.efficacy_stop_threshold,
            // stop thresholds are given in units of the efficacy noise SD
            efficacy_scale: if scenario.noise_sd_f > 0.0 { scenario.noise_sd_f } else { 1.0 },
            replication: self.replication,
            rate: scenario.rate,
            exclusion_side: 0.0,
            region_weights: None,
        };
        let strata = if self.personalized {
            scenario
                .covariates
                .iter()
                .zip(&scenario.thresholds)
                .map(|(z, t)| stratum(vec![*z], *t))
                .collect()
        } else {
            vec![stratum(Vec::new(), scenario.standard_threshold)]
        };
        TrialConfig {
            agents: 2,
            strata,
            max_patients: self.max_patients.unwrap_or(scenario.max_patients),
            grid_levels: 5,
            candidate_grid: None,
            consecutive_required: None,
            toxicity_stop_confidence: 0.9,
            use_exclusion: true,
            fit: self.fit.unwrap_or_default(),
            initialization: self.initialization,
            seed,
        }
    }

    /// Population stratum of the `i`-th patient in a cohort of engine
    /// stratum `k`.
    fn population(&self, k: usize, i: usize, populations: usize) -> usize {
        if self.personalized {
            k
        } else {
            i % populations
        }
    }

    fn engine_stratum(&self, population: usize) -> usize {
        if self.personalized {
            population
        } else {
            0
        }
    }
}

/// State of one population stratum after an iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSnapshot {
    pub estimate: Option<PointEstimate>,
    /// Distance from the true optimum in grid steps.
    pub dose_units: Option<f64>,
    pub rpsel: Option<f64>,
    /// Cumulative patients treated at a truly toxic dose.
    pub toxic_doses: usize,
    pub patients: usize,
    pub unique_doses: usize,
    pub stopped_toxicity: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub populations: Vec<PopulationSnapshot>,
    pub patients: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateTrace {
    pub seed: u64,
    pub iterations: Vec<IterationRecord>,
    pub failure: Option<String>,
}

/// Options of the replicate driver that are not part of a design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOptions {
    /// Posterior draws behind each RPSEL value.
    pub rpsel_draws: usize,
}

impl Default for ReplicateOptions {
    fn default() -> Self {
        ReplicateOptions { rpsel_draws: 10_000 }
    }
}

/// `sqrt(mean_s (f_s - f_opt)^2)` over `draws` samples `f_s ~ N(mean, variance)`.
pub fn rpsel(mean: f64, variance: f64, f_opt: f64, draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = variance.max(0.0).sqrt();
    let total: f64 = (0..draws)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            let e = mean + sd * z - f_opt;
            e * e
        })
        .sum();
    (total / draws as f64).sqrt()
}

/// Runs one simulated trial to completion. Numeric failures end the
/// replicate early with `failure` set; the iterations up to that point are
/// kept.
pub fn run_replicate(
    scenario: &ScenarioSpec,
    design: &DesignSpec,
    seed: u64,
    options: &ReplicateOptions,
) -> Result<ReplicateTrace> {
    scenario.validate()?;
    let populations = scenario.populations();
    let config = design.trial_config(scenario, derive_seed(seed, &[TRIAL_STREAM]));
    let mut trial = Trial::start(config)?;
    let grid = trial.grid().to_vec();
    let spacing = 1.0 / (trial.config().grid_levels - 1) as f64;
    let optima: Vec<Option<(Vec<f64>, f64)>> = (0..populations)
        .map(|z| {
            scenario
                .true_optimum(&grid, z)
                .map(|d| (d.clone(), scenario.efficacy(&d, z)))
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[RESPONSE_STREAM]));
    let mut toxic = vec![0usize; populations];
    let mut patients = vec![0usize; populations];
    let mut doses: Vec<Vec<Vec<f64>>> = vec![Vec::new(); populations];
    let mut iterations: Vec<IterationRecord> = Vec::new();
    let mut frozen: Vec<Option<Frozen>> = vec![None; populations];

    while !trial.is_complete() {
        let mut batches = Vec::new();
        for (k, s) in trial.strata().iter().enumerate() {
            let Some(dose) = s.pending_dose.clone() else { continue };
            let r = trial.config().strata[k].replication;
            let responses = (0..r)
                .map(|i| {
                    let z = design.population(k, i, populations);
                    let (efficacy, toxicity) = scenario.generate_response(&dose, z, &mut rng);
                    toxic[z] += usize::from(scenario.is_toxic(&dose, z));
                    patients[z] += 1;
                    if !doses[z].contains(&dose) {
                        doses[z].push(dose.clone());
                    }
                    Response { efficacy, toxicity }
                })
                .collect();
            batches.push(ObservationBatch {
                stratum: k,
                dose,
                responses,
                idempotency_key: None,
            });
        }
        if let Err(e) = trial.submit_round(batches) {
            return Ok(ReplicateTrace {
                seed,
                iterations,
                failure: Some(e.to_string()),
            });
        }

        let t = iterations.len() as u64;
        let mut snapshot = Vec::with_capacity(populations);
        for z in 0..populations {
            let k = design.engine_stratum(z);
            let status = trial.strata()[k].status;
            let values = match &frozen[z] {
                Some(v) => v.clone(),
                None if status == StratumStatus::StoppedToxicity => (None, None, None),
                None => {
                    let est = match trial.point_estimate(k) {
                        Ok(e) => e,
                        Err(e) => {
                            return Ok(ReplicateTrace {
                                seed,
                                iterations,
                                failure: Some(e.to_string()),
                            })
                        }
                    };
                    match (&est, &optima[z]) {
                        (Some(e), Some((d_opt, f_opt))) => {
                            let dist = e.dose.iter().zip(d_opt).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                            let loss = rpsel(
                                e.mean_f,
                                e.variance_f,
                                *f_opt,
                                options.rpsel_draws,
                                derive_seed(seed, &[RPSEL_STREAM, t, z as u64]),
                            );
                            (est.clone(), Some(dist / spacing), Some(loss))
                        }
                        _ => (est.clone(), None, None),
                    }
                }
            };
            // a stopped stratum keeps the estimate it stopped with
            if !status.is_active() && frozen[z].is_none() {
                frozen[z] = Some(values.clone());
            }
            let (estimate, dose_units, rpsel_value) = values;
            snapshot.push(PopulationSnapshot {
                estimate,
                dose_units,
                rpsel: rpsel_value,
                toxic_doses: toxic[z],
                patients: patients[z],
                unique_doses: doses[z].len(),
                stopped_toxicity: status == StratumStatus::StoppedToxicity,
            });
        }
        iterations.push(IterationRecord {
            populations: snapshot,
            patients: trial.patients_used(),
        });
    }
    Ok(ReplicateTrace {
        seed,
        iterations,
        failure: None,
    })
}
