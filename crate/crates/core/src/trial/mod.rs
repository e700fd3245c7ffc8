//! The sequential dose-finding loop.
//!
//! A [`Trial`] holds one pending dose per active stratum. Each submitted
//! cohort is appended to a single pooled data set (dose coordinates followed
//! by the stratum's covariates), both surfaces are refit, the stratum's
//! stopping rules are checked in the order toxicity, efficacy, budget, and
//! if it is still active its next dose is the cEI maximizer inside its
//! escalation region. The standard design is the one-stratum,
//! covariate-free configuration.
//!
//! Every state change is appended to an event log; [`Trial::replay`]
//! rebuilds a trial from that log and checks that each derived event
//! reappears unchanged.

mod config;
mod events;
mod state;

pub use config::{Initialization, StratumConfig, TrialConfig};
pub use events::{Diagnostics, EventKind, FitSummary, Recommendation};
pub use state::{step_counter, Observation, ObservationBatch, Response, StratumState, StratumStatus};

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{posterior_optimal_dose, CandidatePosterior, CandidateSet};
use crate::error::{Error, Result};
use crate::escalation::RegionState;
use crate::gp::{fit_hyperparameters, FitOptions, GpFit, InputPoint, KernelParams, TrainingSet};
use crate::normal;
use crate::seeds::derive_seed;

const FIT_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
const SAMPLE_STREAM: u64 = 3;

/// One cell of the posterior summary grid served to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub dose: Vec<f64>,
    pub mean_f: f64,
    pub sd_f: f64,
    pub mean_g: f64,
    pub sd_g: f64,
    pub safety_probability: f64,
    pub cei: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorGrid {
    pub stratum: usize,
    /// True before any data: the cells hold placeholder prior summaries.
    pub prior: bool,
    pub incumbent: Option<f64>,
    pub cells: Vec<GridCell>,
}

/// Point estimate of the optimal dose with the efficacy posterior there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointEstimate {
    pub dose: Vec<f64>,
    pub mean_f: f64,
    pub variance_f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialStatus {
    pub strata: Vec<StratumState>,
    pub max_patients: usize,
    pub patients_used: usize,
    pub observations: usize,
    pub refits: u64,
    pub complete: bool,
    pub events: usize,
}

#[derive(Debug, Clone)]
pub struct Trial {
    config: TrialConfig,
    grid: Vec<Vec<f64>>,
    strata: Vec<StratumState>,
    /// Pooled observations in recording order with their stratum.
    records: Vec<(usize, Observation)>,
    fits: Option<(GpFit, GpFit)>,
    refits: u64,
    keys: BTreeSet<String>,
    events: Vec<EventKind>,
}

impl Trial {
    /// Validates `config` and assigns the first dose in every stratum.
    pub fn start(config: TrialConfig) -> Result<Self> {
        config.validate()?;
        let grid = config.grid();
        let allotments = config.allotments();
        let mut strata = Vec::with_capacity(config.strata.len());
        for (k, sc) in config.strata.iter().enumerate() {
            let initial_plan = match config.initialization {
                Initialization::Escalation => Vec::new(),
                Initialization::Random { count } => {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[INIT_STREAM, k as u64]));
                    rand::seq::index::sample(&mut rng, grid.len(), count)
                        .into_iter()
                        .map(|i| grid[i].clone())
                        .collect()
                }
            };
            let first = initial_plan
                .first()
                .cloned()
                .unwrap_or_else(|| vec![0.0; config.agents]);
            strata.push(StratumState {
                region: RegionState::new(sc.region(config.agents)?),
                observations: Vec::new(),
                efficacy_stop_counter: 0,
                toxicity_stop_counter: 0,
                status: StratumStatus::Active,
                patients_used: 0,
                allotment: allotments[k],
                pending_dose: Some(first),
                cohorts: 0,
                initial_plan,
            });
        }
        let mut trial = Trial {
            grid,
            strata,
            records: Vec::new(),
            fits: None,
            refits: 0,
            keys: BTreeSet::new(),
            events: vec![EventKind::TrialCreated {
                config: config.clone(),
            }],
            config,
        };
        for k in 0..trial.strata.len() {
            trial.push_assignment(k);
        }
        Ok(trial)
    }

    pub fn config(&self) -> &TrialConfig {
        &self.config
    }

    pub fn grid(&self) -> &[Vec<f64>] {
        &self.grid
    }

    pub fn strata(&self) -> &[StratumState] {
        &self.strata
    }

    pub fn fits(&self) -> Option<&(GpFit, GpFit)> {
        self.fits.as_ref()
    }

    pub fn events(&self) -> &[EventKind] {
        &self.events
    }

    pub fn patients_used(&self) -> usize {
        self.strata.iter().map(|s| s.patients_used).sum()
    }

    pub fn is_complete(&self) -> bool {
        self.strata.iter().all(|s| !s.status.is_active())
    }

    /// Pending dose per stratum (`None` for stopped strata).
    pub fn pending(&self) -> Vec<Option<Vec<f64>>> {
        self.strata.iter().map(|s| s.pending_dose.clone()).collect()
    }

    pub fn status(&self) -> TrialStatus {
        TrialStatus {
            strata: self.strata.clone(),
            max_patients: self.config.max_patients,
            patients_used: self.patients_used(),
            observations: self.records.len(),
            refits: self.refits,
            complete: self.is_complete(),
            events: self.events.len(),
        }
    }

    fn push_assignment(&mut self, k: usize) {
        let s = &self.strata[k];
        if let Some(dose) = &s.pending_dose {
            self.events.push(EventKind::DoseAssigned {
                stratum: k,
                dose: dose.clone(),
                cohort: s.cohorts,
                region_step: s.region.iteration,
            });
        }
    }

    /// Records one cohort.
    pub fn submit_observations(&mut self, batch: ObservationBatch) -> Result<()> {
        self.submit_round(vec![batch])
    }

    /// Records cohorts from several strata and refits once. Either every
    /// batch is accepted or the trial is left untouched.
    pub fn submit_round(&mut self, batches: Vec<ObservationBatch>) -> Result<()> {
        self.check_batches(&batches)?;

        let mut records = self.records.clone();
        for b in &batches {
            for r in &b.responses {
                records.push((
                    b.stratum,
                    Observation {
                        dose: b.dose.clone(),
                        response: *r,
                    },
                ));
            }
        }
        let fits = self.fit_surfaces(&records, self.refits + 1)?;

        // commit
        self.records = records;
        self.refits += 1;
        for b in &batches {
            if let Some(key) = &b.idempotency_key {
                self.keys.insert(key.clone());
            }
            let s = &mut self.strata[b.stratum];
            s.observations.extend(b.responses.iter().map(|r| Observation {
                dose: b.dose.clone(),
                response: *r,
            }));
            s.patients_used += b.responses.len();
            if s.cohorts < s.initial_plan.len() {
                s.region.advance_unchecked(&b.dose);
            } else {
                s.region.advance(&b.dose)?;
            }
            s.cohorts += 1;
        }
        self.events.push(EventKind::ObservationsRecorded {
            batches: batches.clone(),
        });
        self.events.push(EventKind::FitUpdated {
            refit: self.refits,
            observations: self.records.len(),
            efficacy: FitSummary::from(&fits.0),
            toxicity: FitSummary::from(&fits.1),
        });
        self.fits = Some(fits);

        let mut touched: Vec<usize> = batches.iter().map(|b| b.stratum).collect();
        touched.sort_unstable();
        let mut posteriors = Vec::with_capacity(touched.len());
        for &k in &touched {
            let post = self.grid_posterior(k)?;
            self.check_stops(k, &post);
            posteriors.push(post);
        }
        self.reallocate_budget();
        for &k in &touched {
            let s = &self.strata[k];
            if s.status.is_active() && s.remaining_budget() < self.config.strata[k].replication {
                self.stop(k, StratumStatus::BudgetExhausted);
                self.reallocate_budget();
            }
        }
        for (&k, post) in touched.iter().zip(&posteriors) {
            if self.strata[k].status.is_active() {
                let dose = self.next_dose(k, post)?;
                self.strata[k].pending_dose = Some(dose);
                self.push_assignment(k);
            }
        }
        Ok(())
    }

    fn check_batches(&self, batches: &[ObservationBatch]) -> Result<()> {
        if batches.is_empty() {
            return Err(Error::InvalidArgument("no observation batches".into()));
        }
        let mut seen_strata = BTreeSet::new();
        let mut seen_keys = BTreeSet::new();
        for b in batches {
            let Some(s) = self.strata.get(b.stratum) else {
                return Err(Error::ContractViolation(format!("unknown stratum {}", b.stratum)));
            };
            if !seen_strata.insert(b.stratum) {
                return Err(Error::ContractViolation(format!(
                    "stratum {} appears twice in one round",
                    b.stratum
                )));
            }
            if let Some(key) = &b.idempotency_key {
                if self.keys.contains(key) || !seen_keys.insert(key.clone()) {
                    return Err(Error::State(format!("idempotency key {key:?} was already used")));
                }
            }
            if !s.status.is_active() {
                return Err(Error::State(format!("stratum {} is no longer active", b.stratum)));
            }
            if s.pending_dose.as_deref() != Some(&b.dose[..]) {
                return Err(Error::ContractViolation(format!(
                    "dose {:?} is not the pending dose {:?} of stratum {}",
                    b.dose, s.pending_dose, b.stratum
                )));
            }
            let r = self.config.strata[b.stratum].replication;
            if b.responses.len() != r {
                return Err(Error::ContractViolation(format!(
                    "stratum {} expects {r} responses per cohort, got {}",
                    b.stratum,
                    b.responses.len()
                )));
            }
            if b.responses.iter().any(|r| !(r.efficacy.is_finite() && r.toxicity.is_finite())) {
                return Err(Error::InvalidArgument("responses must be finite".into()));
            }
        }
        Ok(())
    }

    fn point(&self, k: usize, dose: &[f64]) -> Result<InputPoint> {
        InputPoint::new(dose, &self.config.strata[k].covariates)
    }

    fn fit_surfaces(&self, records: &[(usize, Observation)], refit: u64) -> Result<(GpFit, GpFit)> {
        let points = records
            .iter()
            .map(|(k, o)| self.point(*k, &o.dose))
            .collect::<Result<Vec<_>>>()?;
        let f_set = TrainingSet::new(points.clone(), records.iter().map(|(_, o)| o.response.efficacy).collect())?;
        let g_set = TrainingSet::new(points, records.iter().map(|(_, o)| o.response.toxicity).collect())?;
        let fit = |set: &TrainingSet, surface: u64| -> Result<GpFit> {
            let options = FitOptions {
                seed: derive_seed(self.config.seed, &[FIT_STREAM, self.config.fit.seed, refit, surface]),
                ..self.config.fit
            };
            fit_hyperparameters(set, &KernelParams::initial(set), &options)
        };
        Ok((fit(&f_set, 0)?, fit(&g_set, 1)?))
    }

    fn candidates(&self, k: usize) -> CandidateSet {
        CandidateSet {
            doses: self.grid.clone(),
            stratum: k,
            covariates: self.config.strata[k].covariates.clone(),
        }
    }

    /// Both posteriors over the full candidate grid for stratum `k`.
    pub fn grid_posterior(&self, k: usize) -> Result<CandidatePosterior> {
        self.check_stratum(k)?;
        let Some((f, g)) = &self.fits else {
            return Err(Error::State("no data yet".into()));
        };
        CandidatePosterior::evaluate(f, g, &self.candidates(k))
    }

    fn check_stratum(&self, k: usize) -> Result<()> {
        if k >= self.strata.len() {
            return Err(Error::InvalidArgument(format!("unknown stratum {k}")));
        }
        Ok(())
    }

    fn check_stops(&mut self, k: usize, post: &CandidatePosterior) {
        let sc = &self.config.strata[k];
        let threshold = sc.toxicity_threshold;
        let no_safe = (0..post.len()).all(|i| post.safety(i, threshold) < self.config.toxicity_stop_confidence);
        let max_cei = post.max_cei(&sc.safety());
        let delta = sc.efficacy_stop_threshold;
        let required = self.config.consecutive();
        let s = &mut self.strata[k];
        let toxic = s.record_toxicity_check(no_safe, required);
        let futile = s.record_efficacy_check(max_cei / sc.efficacy_scale, delta, required);
        if toxic {
            self.stop(k, StratumStatus::StoppedToxicity);
        } else if futile {
            self.stop(k, StratumStatus::StoppedEfficacy);
        }
    }

    fn stop(&mut self, k: usize, status: StratumStatus) {
        let s = &mut self.strata[k];
        s.status = status;
        s.pending_dose = None;
        self.events.push(EventKind::StopTriggered { stratum: k, status });
    }

    /// Hands the unspent budget of every stopped stratum to the active
    /// ones, split evenly with any remainder going to the lowest index.
    /// Does nothing when no stratum is active.
    pub fn reallocate_budget(&mut self) {
        let active: Vec<usize> = (0..self.strata.len())
            .filter(|&k| self.strata[k].status.is_active())
            .collect();
        if active.is_empty() {
            return;
        }
        for from in 0..self.strata.len() {
            let s = &self.strata[from];
            let amount = s.remaining_budget();
            if s.status.is_active() || amount == 0 {
                continue;
            }
            self.strata[from].allotment = self.strata[from].patients_used;
            let n = active.len();
            for (j, &to) in active.iter().enumerate() {
                self.strata[to].allotment += amount / n + usize::from(j < amount % n);
            }
            self.events.push(EventKind::BudgetReallocated {
                from,
                amount,
                allotments: self.strata.iter().map(|s| s.allotment).collect(),
            });
        }
    }

    fn next_dose(&self, k: usize, post: &CandidatePosterior) -> Result<Vec<f64>> {
        let s = &self.strata[k];
        if let Some(d) = s.initial_plan.get(s.cohorts) {
            return Ok(d.clone());
        }
        let mut allowed = self.region_indices(k, self.config.use_exclusion);
        if allowed.is_empty() {
            allowed = self.region_indices(k, false);
        }
        if allowed.is_empty() {
            return Err(Error::State(format!("no candidate dose inside the region of stratum {k}")));
        }
        let (best, _) = post.select_within(&self.config.strata[k].safety(), &allowed);
        Ok(self.grid[best].clone())
    }

    fn region_indices(&self, k: usize, use_exclusion: bool) -> Vec<usize> {
        let kept = self.strata[k].region.filter_candidates(&self.grid, use_exclusion);
        (0..self.grid.len()).filter(|&i| kept.contains(&self.grid[i])).collect()
    }

    /// Safe candidate with the smallest efficacy mean, with the efficacy
    /// posterior there. `None` before data or when nothing is safe.
    pub fn point_estimate(&self, k: usize) -> Result<Option<PointEstimate>> {
        self.check_stratum(k)?;
        if self.fits.is_none() {
            return Ok(None);
        }
        let post = self.grid_posterior(k)?;
        Ok(post
            .point_estimate(&self.config.strata[k].safety())
            .map(|i| PointEstimate {
                dose: post.doses[i].clone(),
                mean_f: post.efficacy.mean[i],
                variance_f: post.efficacy.variance[i],
            }))
    }

    /// Point estimate and `samples` posterior draws of the optimal dose for
    /// every stratum. Strata stopped for toxicity report no feasible dose.
    pub fn final_recommendation(&mut self, samples: usize, seed: u64) -> Result<Vec<Recommendation>> {
        let recs = self.recommendations(samples, seed)?;
        self.events.push(EventKind::RecommendationIssued {
            samples,
            seed,
            recommendations: recs.clone(),
        });
        Ok(recs)
    }

    /// [`final_recommendation`](Self::final_recommendation) without logging.
    pub fn recommendations(&self, samples: usize, seed: u64) -> Result<Vec<Recommendation>> {
        (0..self.strata.len())
            .map(|k| self.recommend(k, samples, seed))
            .collect()
    }

    fn recommend(&self, k: usize, samples: usize, seed: u64) -> Result<Recommendation> {
        let Some((f, g)) = &self.fits else {
            return Ok(Recommendation {
                stratum: k,
                point_estimate: None,
                posterior_samples: vec![None; samples],
                diagnostics: None,
            });
        };
        let spec = self.config.strata[k].safety();
        let post = self.grid_posterior(k)?;
        let (incumbent, _) = post.incumbent(&spec);
        let diagnostics = Some(Diagnostics {
            incumbent,
            max_cei: post.max_cei(&spec),
            safe_set_size: post.safe_indices(&spec).len(),
        });
        if self.strata[k].status == StratumStatus::StoppedToxicity {
            return Ok(Recommendation {
                stratum: k,
                point_estimate: None,
                posterior_samples: vec![None; samples],
                diagnostics,
            });
        }
        let posterior_samples = if samples == 0 {
            Vec::new()
        } else {
            let stream = derive_seed(seed, &[SAMPLE_STREAM, k as u64]);
            posterior_optimal_dose(f, g, &self.candidates(k), &spec, samples, stream)?
        };
        Ok(Recommendation {
            stratum: k,
            point_estimate: post.point_estimate(&spec).map(|i| post.doses[i].clone()),
            posterior_samples,
            diagnostics,
        })
    }

    /// Posterior summaries over the grid for stratum `k`. Before any data
    /// the cells carry prior placeholders: mean 0, standard deviation 1,
    /// `safety_probability = Phi(threshold)` and zero cEI.
    pub fn posterior_grid(&self, k: usize) -> Result<PosteriorGrid> {
        self.check_stratum(k)?;
        let sc = &self.config.strata[k];
        if self.fits.is_none() {
            let cells = self
                .grid
                .iter()
                .map(|d| GridCell {
                    dose: d.clone(),
                    mean_f: 0.0,
                    sd_f: 1.0,
                    mean_g: 0.0,
                    sd_g: 1.0,
                    safety_probability: normal::cdf(sc.toxicity_threshold),
                    cei: 0.0,
                })
                .collect();
            return Ok(PosteriorGrid {
                stratum: k,
                prior: true,
                incumbent: None,
                cells,
            });
        }
        let post = self.grid_posterior(k)?;
        let spec = sc.safety();
        let (incumbent, _) = post.incumbent(&spec);
        let cells = (0..post.len())
            .map(|i| GridCell {
                dose: post.doses[i].clone(),
                mean_f: post.efficacy.mean[i],
                sd_f: post.efficacy.sd(i),
                mean_g: post.toxicity.mean[i],
                sd_g: post.toxicity.sd(i),
                safety_probability: post.safety(i, spec.threshold),
                cei: post.cei(i, incumbent, spec.threshold),
            })
            .collect();
        Ok(PosteriorGrid {
            stratum: k,
            prior: false,
            incumbent: Some(incumbent),
            cells,
        })
    }

    /// Rebuilds a trial from its event log, re-running every operation and
    /// requiring the derived events to match the log exactly.
    pub fn replay(log: &[EventKind]) -> Result<Self> {
        let Some(EventKind::TrialCreated { config }) = log.first() else {
            return Err(Error::State("log does not start with trial_created".into()));
        };
        let mut trial = Trial::start(config.clone())?;
        let mut pos = trial.events.len();
        trial.verify_prefix(log, 0)?;
        while pos < log.len() {
            match &log[pos] {
                EventKind::ObservationsRecorded { batches } => trial.submit_round(batches.clone())?,
                EventKind::RecommendationIssued { samples, seed, .. } => {
                    trial.final_recommendation(*samples, *seed)?;
                }
                other => {
                    return Err(Error::State(format!(
                        "event {pos} ({}) is not an operation",
                        other.name()
                    )))
                }
            }
            trial.verify_prefix(log, pos)?;
            pos = trial.events.len();
        }
        Ok(trial)
    }

    fn verify_prefix(&self, log: &[EventKind], from: usize) -> Result<()> {
        for i in from..self.events.len() {
            match log.get(i) {
                Some(e) if *e == self.events[i] => {}
                Some(e) => {
                    return Err(Error::State(format!(
                        "log diverges at event {i}: logged {}, replayed {}",
                        e.name(),
                        self.events[i].name()
                    )))
                }
                None => return Err(Error::State(format!("log ends before event {i}"))),
            }
        }
        Ok(())
    }
}
