//! Constrained Bayesian optimization for personalized dose-finding.
//!
//! Efficacy and toxicity are modelled by independent Gaussian processes over
//! standardized dose combinations and covariate levels. Doses are chosen by
//! constrained expected improvement inside an expanding escalation region,
//! and each covariate stratum carries its own stopping rules.
//!
//! * [`gp`]: surrogate fitting and posterior prediction
//! * [`acquisition`]: safety probabilities, safe sets, constrained EI
//! * [`escalation`]: the expanding admissible dose region
//! * [`trial`]: the sequential trial engine and its event stream
//! * [`sim`]: ground-truth scenarios, replicates, metrics and studies

pub mod acquisition;
pub mod error;
pub mod escalation;
pub mod gp;
pub mod normal;
pub mod seeds;
pub mod sim;
pub mod trial;

pub use error::{Error, Result};
