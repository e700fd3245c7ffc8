use serde::{Deserialize, Serialize};

use super::config::TrialConfig;
use super::state::{ObservationBatch, StratumStatus};
use crate::gp::{GpFit, KernelParams};

/// Hyperparameters and fit quality of one surface after a refit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub params: KernelParams,
    pub mean: f64,
    pub log_marginal_likelihood: f64,
    pub converged: bool,
}

impl From<&GpFit> for FitSummary {
    fn from(fit: &GpFit) -> Self {
        FitSummary {
            params: fit.params().clone(),
            mean: fit.mean(),
            log_marginal_likelihood: fit.log_marginal_likelihood(),
            converged: fit.converged(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub incumbent: f64,
    pub max_cei: f64,
    pub safe_set_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub stratum: usize,
    pub point_estimate: Option<Vec<f64>>,
    /// Draws of the optimal dose; `None` marks a draw with no admissible dose.
    pub posterior_samples: Vec<Option<Vec<f64>>>,
    pub diagnostics: Option<Diagnostics>,
}

impl Recommendation {
    /// True when no dose was judged feasible.
    pub fn no_feasible_dose(&self) -> bool {
        self.point_estimate.is_none() && self.posterior_samples.iter().all(Option::is_none)
    }
}

/// Everything a trial does, in order. Operations that take input
/// (`trial_created`, `observations_recorded`, `recommendation_issued`) are
/// followed by the events they caused, which makes the log replayable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventKind {
    TrialCreated {
        config: TrialConfig,
    },
    DoseAssigned {
        stratum: usize,
        dose: Vec<f64>,
        cohort: usize,
        region_step: usize,
    },
    ObservationsRecorded {
        batches: Vec<ObservationBatch>,
    },
    FitUpdated {
        refit: u64,
        observations: usize,
        efficacy: FitSummary,
        toxicity: FitSummary,
    },
    StopTriggered {
        stratum: usize,
        status: StratumStatus,
    },
    BudgetReallocated {
        from: usize,
        amount: usize,
        allotments: Vec<usize>,
    },
    RecommendationIssued {
        samples: usize,
        seed: u64,
        recommendations: Vec<Recommendation>,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::TrialCreated { .. } => "trial_created",
            EventKind::DoseAssigned { .. } => "dose_assigned",
            EventKind::ObservationsRecorded { .. } => "observations_recorded",
            EventKind::FitUpdated { .. } => "fit_updated",
            EventKind::StopTriggered { .. } => "stop_triggered",
            EventKind::BudgetReallocated { .. } => "budget_reallocated",
            EventKind::RecommendationIssued { .. } => "recommendation_issued",
        }
    }
}
