//! Experiment harness around `irs-core`: CSV bundles, the cross-validated
//! experiment protocol, metric reports, model checkpoints and the retail
//! transaction feature pipeline. The `irs` binary exposes these as
//! subcommands.

pub mod bundle;
pub mod checkpoint;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod report;
pub mod transactions;

pub use error::{HarnessError, Result};
