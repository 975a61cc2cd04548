use std::path::PathBuf;

use krasovskii::controllers::ControllerError;
use krasovskii::dynamics::DynamicsError;
use krasovskii::numerics::NumericsError;
use krasovskii::passivity::PassivityError;
use krasovskii::plants::PlantError;
use thiserror::Error;

use crate::scenario::ConfigError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("audit violation: {0}")]
    Violation(String),
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    /// 1 for audit violations, 2 for solver failures, 3 for configuration
    /// and output errors.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Violation(_) => 1,
            CliError::Solver(_) => 2,
            CliError::Config(_) | CliError::Output { .. } => 3,
        }
    }
}

fn config(e: impl std::fmt::Display) -> CliError {
    CliError::Config(ConfigError::Invalid(e.to_string()))
}

impl From<NumericsError> for CliError {
    fn from(e: NumericsError) -> Self {
        CliError::Solver(e.to_string())
    }
}

impl From<DynamicsError> for CliError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::InvalidDelta(_)
            | DynamicsError::InvalidGrid(_)
            | DynamicsError::DimensionMismatch { .. }
            | DynamicsError::EmptyInputs => config(e),
            _ => CliError::Solver(e.to_string()),
        }
    }
}

impl From<ControllerError> for CliError {
    fn from(e: ControllerError) -> Self {
        match e {
            ControllerError::Numerics(n) => n.into(),
            _ => config(e),
        }
    }
}

impl From<PassivityError> for CliError {
    fn from(e: PassivityError) -> Self {
        match e {
            PassivityError::Numerics(n) => n.into(),
            PassivityError::NonpositiveCharge { .. } => CliError::Solver(e.to_string()),
            _ => config(e),
        }
    }
}

impl From<PlantError> for CliError {
    fn from(e: PlantError) -> Self {
        match e {
            PlantError::Dynamics(d) => d.into(),
            PlantError::Numerics(n) => n.into(),
            PlantError::Controller(c) => c.into(),
            PlantError::DomainViolation(_) => CliError::Solver(e.to_string()),
            _ => config(e),
        }
    }
}
