use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{aggregate, MetricRow};
use super::replicate::{run_replicate, DesignSpec, ReplicateOptions, ReplicateTrace};
use super::scenario::{OptimumRecord, ScenarioSpec};
use crate::error::{Error, Result};
use crate::escalation::regular_grid;
use crate::seeds::{derive_seed, name_tag};

const BUILTIN: &str = include_str!("../../configs/default.toml");

/// Scenario and design catalogue, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(rename = "scenario", default)]
    pub scenarios: Vec<ScenarioSpec>,
    #[serde(rename = "design", default)]
    pub designs: Vec<DesignSpec>,
}

impl StudyConfig {
    /// Parses and validates a TOML catalogue. Parse errors carry the line
    /// and field that failed.
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: StudyConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for s in &config.scenarios {
            s.validate()?;
        }
        Ok(config)
    }

    /// The catalogue shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_toml(BUILTIN).expect("bundled configuration is valid")
    }

    pub fn scenario(&self, name: &str) -> Result<&ScenarioSpec> {
        self.scenarios
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Config(format!("unknown scenario {name:?}")))
    }

    pub fn design(&self, name: &str) -> Result<&DesignSpec> {
        self.designs
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| Error::Config(format!("unknown design {name:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRunSpec {
    pub scenarios: Vec<String>,
    pub designs: Vec<String>,
    pub replicates: usize,
    pub master_seed: u64,
    /// Worker threads; zero uses every core.
    pub threads: usize,
    #[serde(default)]
    pub options: ReplicateOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub scenario: String,
    pub design: String,
    pub replicate: usize,
    pub seed: u64,
    pub error: String,
}

/// Optimum of one population on the candidate grid, recomputed from the
/// true surfaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputedOptimum {
    pub stratum: usize,
    pub dose: Option<Vec<f64>>,
    pub f_opt: Option<f64>,
    pub g_opt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyManifest {
    pub master_seed: u64,
    pub replicates: usize,
    pub scenarios: Vec<String>,
    pub designs: Vec<String>,
    pub rpsel_draws: usize,
    pub failures: Vec<FailureRecord>,
    pub reference_optima: BTreeMap<String, Vec<OptimumRecord>>,
    pub grid_optima: BTreeMap<String, Vec<ComputedOptimum>>,
    pub started_at_ms: u128,
    pub finished_at_ms: u128,
}

#[derive(Debug, Clone)]
pub struct StudyOutput {
    pub rows: Vec<MetricRow>,
    pub manifest: StudyManifest,
    /// Raw replicate traces keyed by `(scenario, design)`.
    pub traces: BTreeMap<(String, String), Vec<ReplicateTrace>>,
}

impl StudyOutput {
    pub fn csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::State(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::State(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::State(e.to_string()))
    }

    /// Writes `metrics.csv` and `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let io = |e: std::io::Error| Error::State(format!("{}: {e}", dir.display()));
        fs::create_dir_all(dir).map_err(io)?;
        fs::write(dir.join("metrics.csv"), self.csv()?).map_err(io)?;
        let manifest = serde_json::to_string_pretty(&self.manifest).map_err(|e| Error::State(e.to_string()))?;
        fs::write(dir.join("manifest.json"), manifest).map_err(io)?;
        Ok(())
    }

    pub fn failure_count(&self) -> usize {
        self.manifest.failures.len()
    }
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// Seed of replicate `index` of a scenario/design pair.
pub fn replicate_seed(master: u64, scenario: &str, design: &str, index: usize) -> u64 {
    derive_seed(master, &[name_tag(scenario), name_tag(design), index as u64])
}

/// Runs every scenario x design x replicate combination. Replicates run in
/// parallel; the output does not depend on the thread count.
pub fn run_study(config: &StudyConfig, spec: &StudyRunSpec) -> Result<StudyOutput> {
    if spec.replicates == 0 {
        return Err(Error::InvalidArgument("at least one replicate is required".into()));
    }
    let scenarios = spec
        .scenarios
        .iter()
        .map(|s| config.scenario(s))
        .collect::<Result<Vec<_>>>()?;
    let designs = spec
        .designs
        .iter()
        .map(|d| config.design(d))
        .collect::<Result<Vec<_>>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.threads)
        .build()
        .map_err(|e| Error::State(e.to_string()))?;

    let started_at_ms = now_ms();
    let grid = regular_grid(2, 5);
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut traces = BTreeMap::new();
    let mut reference_optima = BTreeMap::new();
    let mut grid_optima = BTreeMap::new();
    for scenario in &scenarios {
        let computed: Vec<ComputedOptimum> = (0..scenario.populations())
            .map(|z| {
                let dose = scenario.true_optimum(&grid, z);
                ComputedOptimum {
                    stratum: z,
                    f_opt: dose.as_ref().map(|d| scenario.efficacy(d, z)),
                    g_opt: dose.as_ref().map(|d| scenario.toxicity(d, z)),
                    dose,
                }
            })
            .collect();
        let feasible: Vec<bool> = computed.iter().map(|c| c.dose.is_some()).collect();
        reference_optima.insert(scenario.name.clone(), scenario.optima.clone());
        grid_optima.insert(scenario.name.clone(), computed);

        for design in &designs {
            let results: Vec<(u64, Result<ReplicateTrace>)> = pool.install(|| {
                (0..spec.replicates)
                    .into_par_iter()
                    .map(|i| {
                        let seed = replicate_seed(spec.master_seed, &scenario.name, &design.name, i);
                        (seed, run_replicate(scenario, design, seed, &spec.options))
                    })
                    .collect()
            });
            let mut pair = Vec::with_capacity(results.len());
            for (i, (seed, result)) in results.into_iter().enumerate() {
                let trace = result.unwrap_or_else(|e| ReplicateTrace {
                    seed,
                    iterations: Vec::new(),
                    failure: Some(e.to_string()),
                });
                if let Some(error) = &trace.failure {
                    failures.push(FailureRecord {
                        scenario: scenario.name.clone(),
                        design: design.name.clone(),
                        replicate: i,
                        seed,
                        error: error.clone(),
                    });
                }
                pair.push(trace);
            }
            rows.extend(aggregate(&scenario.name, &design.name, &pair, &feasible));
            traces.insert((scenario.name.clone(), design.name.clone()), pair);
        }
    }
    Ok(StudyOutput {
        rows,
        manifest: StudyManifest {
            master_seed: spec.master_seed,
            replicates: spec.replicates,
            scenarios: spec.scenarios.clone(),
            designs: spec.designs.clone(),
            rpsel_draws: spec.options.rpsel_draws,
            failures,
            reference_optima,
            grid_optima,
            started_at_ms,
            finished_at_ms: now_ms(),
        },
        traces,
    })
}
