//! Expanding admissible dose region used to collect initial data.
//!
//! At expansion step `q` the region is `{d in [0,1]^J : w^T d <= rate * q}`.
//! Step 0 holds only the zero dose. Until the region covers the whole cube,
//! small neighbourhoods around already evaluated doses can be removed from
//! the candidates so that early cohorts spread out.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub dims: usize,
    /// Expansion per step along the weighted dose sum.
    pub rate: f64,
    pub weights: Vec<f64>,
    /// Side of the hypercube excluded around each evaluated dose; zero
    /// excludes exact matches only.
    pub exclusion_side: f64,
}

impl RegionSpec {
    /// Uniform weights.
    pub fn new(dims: usize, rate: f64, exclusion_side: f64) -> Result<Self> {
        Self::weighted(vec![1.0; dims], rate, exclusion_side)
    }

    pub fn weighted(weights: Vec<f64>, rate: f64, exclusion_side: f64) -> Result<Self> {
        let spec = RegionSpec {
            dims: weights.len(),
            rate,
            weights,
            exclusion_side,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims == 0 || self.weights.len() != self.dims {
            return Err(invalid("region needs one weight per dosing agent"));
        }
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return Err(invalid("expansion rate must be positive"));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(invalid("region weights must be positive"));
        }
        if !(self.exclusion_side >= 0.0 && self.exclusion_side < self.rate) {
            return Err(invalid(
                "exclusion side must be nonnegative and smaller than the expansion rate",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionState {
    pub spec: RegionSpec,
    /// Number of expansion steps taken.
    pub iteration: usize,
    pub evaluated: Vec<Vec<f64>>,
}

impl RegionState {
    pub fn new(spec: RegionSpec) -> Self {
        RegionState {
            spec,
            iteration: 0,
            evaluated: Vec::new(),
        }
    }

    fn check_dims(&self, dose: &[f64]) -> Result<()> {
        if dose.len() != self.spec.dims {
            return Err(invalid(format!(
                "dose has {} agents, region has {}",
                dose.len(),
                self.spec.dims
            )));
        }
        Ok(())
    }

    fn weighted_sum(&self, dose: &[f64]) -> f64 {
        self.spec.weights.iter().zip(dose).map(|(w, d)| w * d).sum()
    }

    fn bound(&self) -> f64 {
        self.spec.rate * self.iteration as f64
    }

    /// Closed half-space test `w^T d <= rate * q`.
    pub fn contains(&self, dose: &[f64]) -> Result<bool> {
        self.check_dims(dose)?;
        Ok(self.weighted_sum(dose) <= self.bound() + BOUNDARY_TOL)
    }

    /// True once the far corner of the cube is admissible.
    pub fn is_fully_expanded(&self) -> bool {
        self.bound() + BOUNDARY_TOL >= self.spec.weights.iter().sum::<f64>()
    }

    fn excluded(&self, dose: &[f64]) -> bool {
        let half = self.spec.exclusion_side / 2.0;
        self.evaluated.iter().any(|e| {
            e.iter()
                .zip(dose)
                .all(|(a, b)| (a - b).abs() <= half + BOUNDARY_TOL)
        })
    }

    /// Candidates inside the region, minus exclusion neighbourhoods when
    /// requested and the region is not yet the whole cube.
    pub fn filter_candidates(&self, candidates: &[Vec<f64>], use_exclusion: bool) -> Vec<Vec<f64>> {
        let exclude = use_exclusion && !self.is_fully_expanded();
        candidates
            .iter()
            .filter(|d| d.len() == self.spec.dims)
            .filter(|d| self.weighted_sum(d) <= self.bound() + BOUNDARY_TOL)
            .filter(|d| !(exclude && self.excluded(d)))
            .cloned()
            .collect()
    }

    /// Records an evaluated dose and expands the region by one step.
    pub fn advance(&mut self, newly_evaluated: &[f64]) -> Result<()> {
        if !self.contains(newly_evaluated)? {
            return Err(Error::ContractViolation(format!(
                "dose {newly_evaluated:?} lies outside the region at step {}",
                self.iteration
            )));
        }
        self.evaluated.push(newly_evaluated.to_vec());
        self.iteration += 1;
        Ok(())
    }

    /// Records a dose chosen without regard to the region (random
    /// initialization) and expands.
    pub(crate) fn advance_unchecked(&mut self, dose: &[f64]) {
        self.evaluated.push(dose.to_vec());
        self.iteration += 1;
    }
}

/// The `steps x steps` grid with spacing `1 / (steps - 1)` in two or more
/// dimensions, in lexicographic order.
pub fn regular_grid(dims: usize, levels: usize) -> Vec<Vec<f64>> {
    assert!(levels >= 2, "a grid needs at least two levels");
    let step = 1.0 / (levels - 1) as f64;
    let mut out = vec![Vec::new()];
    for _ in 0..dims {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..levels).map(move |i| {
                    let mut p = prefix.clone();
                    p.push(i as f64 * step);
                    p
                })
            })
            .collect();
    }
    out
}
