//! Monte-Carlo evaluation of designs against known response surfaces.

mod metrics;
mod replicate;
mod scenario;
mod study;
mod surface;

pub use metrics::{
    aggregate, mean_and_se, MetricLookup, MetricRow, DOSE_UNITS, RPSEL, SAMPLE_SIZE, TOXICITY_STOP_RATE,
    TOXIC_DOSES, UNIQUE_DOSES,
};
pub use replicate::{
    rpsel, run_replicate, DesignSpec, IterationRecord, PopulationSnapshot, ReplicateOptions, ReplicateTrace,
};
pub use scenario::{ae_burden_score, burden_to_toxicity, AeWeights, OptimumRecord, ScenarioSpec};
pub use study::{
    replicate_seed, run_study, ComputedOptimum, FailureRecord, StudyConfig, StudyManifest, StudyOutput,
    StudyRunSpec,
};
pub use surface::SurfaceSpec;
