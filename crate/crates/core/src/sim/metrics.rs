use serde::{Deserialize, Serialize};

use super::replicate::{IterationRecord, ReplicateTrace};

/// One line of a metric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scenario: String,
    pub design: String,
    /// Population stratum index, or `all` for trial-level quantities.
    pub stratum: String,
    pub iteration: usize,
    pub metric: String,
    pub value: f64,
    pub mc_se: f64,
}

pub const TOXIC_DOSES: &str = "toxic_doses";
pub const DOSE_UNITS: &str = "dose_units";
pub const RPSEL: &str = "rpsel";
pub const TOXICITY_STOP_RATE: &str = "incorrect_toxicity_stop_rate";
pub const SAMPLE_SIZE: &str = "sample_size";
pub const UNIQUE_DOSES: &str = "unique_doses";

/// Mean and Monte-Carlo standard error; `None` for no values.
pub fn mean_and_se(values: &[f64]) -> Option<(f64, f64)> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Some((mean, (var / n as f64).sqrt()))
}

/// Iteration `t` of a replicate, carrying its last record forward once it
/// has finished.
fn at(trace: &ReplicateTrace, t: usize) -> &IterationRecord {
    &trace.iterations[t.min(trace.iterations.len() - 1)]
}

/// Per-iteration averages over the successful replicates. `feasible[z]`
/// says whether population `z` has any truly safe dose, which is what makes
/// a toxicity stop incorrect.
pub fn aggregate(scenario: &str, design: &str, traces: &[ReplicateTrace], feasible: &[bool]) -> Vec<MetricRow> {
    let ok: Vec<&ReplicateTrace> = traces
        .iter()
        .filter(|t| t.failure.is_none() && !t.iterations.is_empty())
        .collect();
    let Some(horizon) = ok.iter().map(|t| t.iterations.len()).max() else {
        return Vec::new();
    };
    let mut rows = Vec::new();
    let mut push = |stratum: String, t: usize, metric: &str, values: Vec<f64>| {
        if let Some((value, mc_se)) = mean_and_se(&values) {
            rows.push(MetricRow {
                scenario: scenario.to_string(),
                design: design.to_string(),
                stratum,
                iteration: t + 1,
                metric: metric.to_string(),
                value,
                mc_se,
            });
        }
    };
    for t in 0..horizon {
        for (z, &feasible_z) in feasible.iter().enumerate() {
            let pop = |f: &dyn Fn(&super::replicate::PopulationSnapshot) -> Option<f64>| -> Vec<f64> {
                ok.iter().filter_map(|tr| f(&at(tr, t).populations[z])).collect()
            };
            let label = z.to_string();
            push(label.clone(), t, TOXIC_DOSES, pop(&|p| Some(p.toxic_doses as f64)));
            push(label.clone(), t, DOSE_UNITS, pop(&|p| p.dose_units));
            push(label.clone(), t, RPSEL, pop(&|p| p.rpsel));
            push(
                label.clone(),
                t,
                TOXICITY_STOP_RATE,
                pop(&|p| Some(f64::from(u8::from(p.stopped_toxicity && feasible_z)))),
            );
            push(label.clone(), t, SAMPLE_SIZE, pop(&|p| Some(p.patients as f64)));
            push(label, t, UNIQUE_DOSES, pop(&|p| Some(p.unique_doses as f64)));
        }
        let total: Vec<f64> = ok.iter().map(|tr| at(tr, t).patients as f64).collect();
        push("all".into(), t, SAMPLE_SIZE, total);
        let toxic: Vec<f64> = ok
            .iter()
            .map(|tr| at(tr, t).populations.iter().map(|p| p.toxic_doses as f64).sum())
            .collect();
        push("all".into(), t, TOXIC_DOSES, toxic);
    }
    rows
}

/// Lookup over a metric table.
pub trait MetricLookup {
    /// Value at the last iteration recorded for this combination.
    fn final_value(&self, scenario: &str, design: &str, stratum: &str, metric: &str) -> Option<f64>;
}

impl MetricLookup for [MetricRow] {
    fn final_value(&self, scenario: &str, design: &str, stratum: &str, metric: &str) -> Option<f64> {
        self.iter()
            .filter(|r| r.scenario == scenario && r.design == design && r.stratum == stratum && r.metric == metric)
            .max_by_key(|r| r.iteration)
            .map(|r| r.value)
    }
}
