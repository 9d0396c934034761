//! Seeded batch experiments over randomly generated MDPs.
//!
//! Each replicate fixes an MDP, a demonstrator stream and an MCMC seed, and
//! every stopping method is scored on that same replicate. Outputs are raw
//! per-replicate records plus an aggregate table of means and standard
//! errors.

pub mod config;
pub mod error;
pub mod metrics;
pub mod record;
pub mod runner;

pub use config::{EnvironmentSpec, ExperimentConfig, ExperimentKind, MethodGrid, Seeding};
pub use error::{HarnessError, Result};
pub use metrics::{aggregate, classify_outcome, f1_score, lookup, Outcome, F1};
pub use record::{export_results, import_results, AggregateRow, ExportFormat, ReplicateRecord};
pub use runner::{run_replicate, run_replicates, run_trajectory, ExperimentResults, ReplicateSeeds, RoundRecord};
