use serde::{Deserialize, Serialize};

use crate::acquisition::SafetySpec;
use crate::error::{Error, Result};
use crate::escalation::{regular_grid, RegionSpec};
use crate::gp::FitOptions;

fn default_confidence() -> f64 {
    0.9
}

fn default_one() -> f64 {
    1.0
}

fn default_levels() -> usize {
    5
}

fn default_true() -> bool {
    true
}

/// Per-stratum design settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StratumConfig {
    /// Standardized covariate levels; empty for the standard design.
    #[serde(default)]
    pub covariates: Vec<f64>,
    pub toxicity_threshold: f64,
    #[serde(default = "default_confidence")]
    pub safety_confidence: f64,
    /// Zero disables stopping for efficacy.
    #[serde(default)]
    pub efficacy_stop_threshold: f64,
    /// Efficacy response unit for the stop rule: the maximum cEI is divided
    /// by this before it is compared with `efficacy_stop_threshold`.
    #[serde(default = "default_one")]
    pub efficacy_scale: f64,
    /// Patients per evaluated dose.
    pub replication: usize,
    pub rate: f64,
    #[serde(default)]
    pub exclusion_side: f64,
    /// Expansion weights; uniform when omitted.
    #[serde(default)]
    pub region_weights: Option<Vec<f64>>,
}

impl StratumConfig {
    pub fn safety(&self) -> SafetySpec {
        SafetySpec {
            threshold: self.toxicity_threshold,
            confidence: self.safety_confidence,
        }
    }

    pub fn region(&self, agents: usize) -> Result<RegionSpec> {
        let weights = self.region_weights.clone().unwrap_or_else(|| vec![1.0; agents]);
        if weights.len() != agents {
            return Err(Error::Config(format!(
                "region_weights has {} entries for {agents} agents",
                weights.len()
            )));
        }
        RegionSpec::weighted(weights, self.rate, self.exclusion_side)
            .map_err(|e| Error::Config(e.to_string()))
    }
}

/// How the first doses of each stratum are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Initialization {
    /// Start at the zero dose and follow the expanding region.
    #[default]
    Escalation,
    /// The first `count` doses are distinct grid points drawn uniformly at
    /// random, ignoring the region (which still expands once per dose).
    Random { count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialConfig {
    /// Number of dosing agents `J`.
    pub agents: usize,
    pub strata: Vec<StratumConfig>,
    pub max_patients: usize,
    /// Levels per agent of the regular candidate grid.
    #[serde(default = "default_levels")]
    pub grid_levels: usize,
    /// Explicit candidate doses; replaces the regular grid when present.
    #[serde(default)]
    pub candidate_grid: Option<Vec<Vec<f64>>>,
    /// Consecutive violating checks needed to stop; `J + 1` when omitted.
    #[serde(default)]
    pub consecutive_required: Option<usize>,
    #[serde(default = "default_confidence")]
    pub toxicity_stop_confidence: f64,
    /// Drop already evaluated doses while the region is still growing.
    #[serde(default = "default_true")]
    pub use_exclusion: bool,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default)]
    pub initialization: Initialization,
    #[serde(default)]
    pub seed: u64,
}

impl TrialConfig {
    pub fn consecutive(&self) -> usize {
        self.consecutive_required.unwrap_or(self.agents + 1)
    }

    pub fn grid(&self) -> Vec<Vec<f64>> {
        match &self.candidate_grid {
            Some(g) => g.clone(),
            None => regular_grid(self.agents, self.grid_levels),
        }
    }

    pub fn covariate_dims(&self) -> usize {
        self.strata.first().map_or(0, |s| s.covariates.len())
    }

    /// Initial per-stratum budgets: an even split with the remainder going
    /// to the lowest-indexed strata.
    pub fn allotments(&self) -> Vec<usize> {
        let k = self.strata.len();
        (0..k)
            .map(|i| self.max_patients / k + usize::from(i < self.max_patients % k))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.agents == 0 {
            return bad("at least one dosing agent is required".into());
        }
        if self.strata.is_empty() {
            return bad("at least one stratum is required".into());
        }
        let p = self.covariate_dims();
        for (k, s) in self.strata.iter().enumerate() {
            if s.covariates.len() != p {
                return bad(format!("stratum {k} has {} covariates, expected {p}", s.covariates.len()));
            }
            if s.covariates.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return bad(format!("stratum {k} covariates must lie in [0, 1]"));
            }
            if s.toxicity_threshold.is_nan() {
                return bad(format!("stratum {k} toxicity_threshold is NaN"));
            }
            if !(s.safety_confidence > 0.0 && s.safety_confidence < 1.0) {
                return bad(format!("stratum {k} safety_confidence must lie in (0, 1)"));
            }
            if !(s.efficacy_stop_threshold >= 0.0 && s.efficacy_stop_threshold.is_finite()) {
                return bad(format!("stratum {k} efficacy_stop_threshold must be nonnegative"));
            }
            if !(s.efficacy_scale > 0.0 && s.efficacy_scale.is_finite()) {
                return bad(format!("stratum {k} efficacy_scale must be positive"));
            }
            if s.replication == 0 {
                return bad(format!("stratum {k} replication must be positive"));
            }
            s.region(self.agents)
                .map_err(|e| Error::Config(format!("stratum {k}: {e}")))?;
        }
        for (i, a) in self.strata.iter().enumerate() {
            if self.strata[i + 1..].iter().any(|b| b.covariates == a.covariates) {
                return bad("two strata share a covariate pattern".into());
            }
        }
        let needed: usize = self.strata.iter().map(|s| s.replication).sum();
        if self.max_patients < needed {
            return bad(format!(
                "max_patients {} cannot cover one cohort per stratum ({needed})",
                self.max_patients
            ));
        }
        for (k, (a, s)) in self.allotments().iter().zip(&self.strata).enumerate() {
            if *a < s.replication {
                return bad(format!("stratum {k} budget {a} is smaller than its cohort size"));
            }
        }
        if self.candidate_grid.is_none() && self.grid_levels < 2 {
            return bad("grid_levels must be at least 2".into());
        }
        let grid = self.grid();
        if grid.is_empty() {
            return bad("candidate grid is empty".into());
        }
        for d in &grid {
            if d.len() != self.agents || d.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return bad(format!("candidate {d:?} is not a standardized {}-agent dose", self.agents));
            }
        }
        if self.consecutive() == 0 {
            return bad("consecutive_required must be positive".into());
        }
        if !(self.toxicity_stop_confidence > 0.0 && self.toxicity_stop_confidence < 1.0) {
            return bad("toxicity_stop_confidence must lie in (0, 1)".into());
        }
        if let Initialization::Random { count } = self.initialization {
            if count == 0 || count > grid.len() {
                return bad(format!("random initialization count {count} must lie in 1..={}", grid.len()));
            }
        }
        Ok(())
    }
}
