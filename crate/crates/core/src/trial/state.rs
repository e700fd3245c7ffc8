use serde::{Deserialize, Serialize};

use crate::escalation::RegionState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratumStatus {
    Active,
    StoppedEfficacy,
    StoppedToxicity,
    BudgetExhausted,
}

impl StratumStatus {
    pub fn is_active(self) -> bool {
        self == StratumStatus::Active
    }
}

/// One patient's pair of responses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub efficacy: f64,
    pub toxicity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub dose: Vec<f64>,
    pub response: Response,
}

/// Responses of one cohort treated at the stratum's pending dose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationBatch {
    pub stratum: usize,
    pub dose: Vec<f64>,
    pub responses: Vec<Response>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumState {
    pub region: RegionState,
    pub observations: Vec<Observation>,
    pub efficacy_stop_counter: usize,
    pub toxicity_stop_counter: usize,
    pub status: StratumStatus,
    pub patients_used: usize,
    /// Patients this stratum may still be given in total, including those
    /// already used. Grows when another stratum stops and passes on its
    /// remaining budget.
    pub allotment: usize,
    /// Dose awaiting the next cohort; `None` once the stratum has stopped.
    pub pending_dose: Option<Vec<f64>>,
    pub cohorts: usize,
    /// Doses drawn up front for random initialization, consumed in order.
    #[serde(default)]
    pub initial_plan: Vec<Vec<f64>>,
}

impl StratumState {
    pub fn remaining_budget(&self) -> usize {
        self.allotment.saturating_sub(self.patients_used)
    }

    /// Updates the toxicity counter with one check. Returns true when the
    /// check completes a run of `required` consecutive violations.
    pub fn record_toxicity_check(&mut self, no_safe_dose: bool, required: usize) -> bool {
        self.toxicity_stop_counter = step_counter(self.toxicity_stop_counter, no_safe_dose, required);
        self.toxicity_stop_counter >= required
    }

    /// Same for the efficacy rule: a check violates when the largest cEI is
    /// strictly below `delta`.
    pub fn record_efficacy_check(&mut self, max_cei: f64, delta: f64, required: usize) -> bool {
        self.efficacy_stop_counter = step_counter(self.efficacy_stop_counter, max_cei < delta, required);
        self.efficacy_stop_counter >= required
    }
}

/// Consecutive-violation counter: increments on a violation, resets
/// otherwise, saturates at `required`.
pub fn step_counter(count: usize, violated: bool, required: usize) -> usize {
    if violated {
        (count + 1).min(required)
    } else {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::escalation::RegionSpec;
    use proptest::prelude::*;

    fn stratum() -> StratumState {
        StratumState {
            region: RegionState::new(RegionSpec::new(2, 0.25, 0.0).unwrap()),
            observations: vec![],
            efficacy_stop_counter: 0,
            toxicity_stop_counter: 0,
            status: StratumStatus::Active,
            patients_used: 0,
            allotment: 40,
            pending_dose: Some(vec![0.0, 0.0]),
            cohorts: 0,
            initial_plan: vec![],
        }
    }

    #[test]
    fn worked_efficacy_sequence_stops_on_fourth_value() {
        let mut s = stratum();
        let fired: Vec<bool> = [0.12, 0.10, 0.09, 0.08]
            .iter()
            .map(|v| s.record_efficacy_check(*v, 0.11, 3))
            .collect();
        assert_eq!(fired, vec![false, false, false, true]);
    }

    #[test]
    fn zero_delta_never_fires() {
        let mut s = stratum();
        for _ in 0..50 {
            assert!(!s.record_efficacy_check(0.0, 0.0, 3));
        }
    }

    #[test]
    fn alternating_never_fires() {
        let mut s = stratum();
        for i in 0..40 {
            assert!(!s.record_toxicity_check(i % 2 == 0, 3));
        }
    }

    proptest! {
        #[test]
        fn counter_matches_reference_scan(seq in proptest::collection::vec(any::<bool>(), 0..60), required in 1usize..6) {
            let mut s = stratum();
            let mut first_fire = None;
            for (i, v) in seq.iter().enumerate() {
                if s.record_toxicity_check(*v, required) && first_fire.is_none() {
                    first_fire = Some(i);
                }
            }
            let reference = (0..seq.len()).find(|&i| i + 1 >= required && seq[i + 1 - required..=i].iter().all(|v| *v));
            prop_assert_eq!(first_fire, reference);
        }
    }
}
