//! Scenario-driven command line for the fairembed toolkit: config
//! ingestion, seeded execution, CSV emission, and the named experiments
//! built from the core library.
//!
//! The binary (`fairembed`) is a thin wrapper over this library so
//! integration tests can run scenarios in-process.

pub mod config;
pub mod error;
pub mod scenario;

pub use config::{parse_config, Scenario, ScenarioConfig};
pub use error::AppError;
pub use scenario::{execute, run_scenario, Artifact};
