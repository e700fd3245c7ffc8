//! Reference oracles shared by the acceptance suite.

pub mod oracle;
