//! Scenario runner for sampled-data controllers designed through
//! Krasovskii passivity: closed-loop simulation of boost and buck
//! microgrids and seeded random linear port-Hamiltonian batches, audit
//! suites and CSV output.

pub mod build;
pub mod commands;
pub mod error;
pub mod report;
pub mod scenario;
pub mod suites;

pub use commands::{Overrides, Suite};
pub use error::CliError;
pub use report::{Check, Metric, RunReport};
pub use scenario::{ConfigError, Scenario};
