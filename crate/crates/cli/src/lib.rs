//! Configuration-driven batch runner for the divlab checks.

pub mod config;
pub mod runner;
pub mod suites;

pub use config::{CheckKind, CheckSpec, ConfigError, RunConfig};
pub use runner::{execute, ItemResult, RunOptions, RunSummary};
pub use suites::{suite_config, SUITE_NAMES};
