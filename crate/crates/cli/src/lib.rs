//! Command-line front end: batch simulation studies and the trial-conduct
//! HTTP service.

pub mod service;
pub mod simulate;
pub mod store;
