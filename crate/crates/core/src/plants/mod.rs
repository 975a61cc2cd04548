//! Concrete plant models.

use thiserror::Error;

use crate::controllers::ControllerError;
use crate::dynamics::DynamicsError;
use crate::numerics::NumericsError;

pub mod boost;
pub mod buck;
pub mod lph;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("{what}: expected dimension {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("reference voltage {v_star} at node {node} is below the source voltage {v_source}")]
    InfeasibleReference { node: usize, v_star: f64, v_source: f64 },
    #[error("state outside the admissible domain: {0}")]
    DomainViolation(String),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub(crate) fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<(), PlantError> {
    if expected != actual {
        return Err(PlantError::DimensionMismatch {
            what,
            expected,
            actual,
        });
    }
    Ok(())
}

pub(crate) fn check_positive(what: &str, v: &crate::numerics::Vector) -> Result<(), PlantError> {
    if let Some((i, x)) = v.iter().enumerate().find(|(_, x)| !(**x > 0.0) || !x.is_finite()) {
        return Err(PlantError::InvariantViolation(format!(
            "{what}[{i}] = {x} must be positive"
        )));
    }
    Ok(())
}

/// Multiplicative parameter step applied from `time` seconds on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadStep {
    pub time: f64,
    pub factor: f64,
}

impl LoadStep {
    /// Factor in effect at `t`; switching instants are matched to within
    /// `1e-9` s so that sampled grids hit them exactly.
    pub fn factor_at(step: Option<&LoadStep>, t: f64) -> f64 {
        match step {
            Some(s) if t >= s.time - 1e-9 => s.factor,
            _ => 1.0,
        }
    }
}

/// Power-line incidence of the four-node ring 1–2, 2–3, 3–4, 1–4 with
/// line currents positive from the first to the second endpoint.
pub fn ring4_lines() -> Vec<(usize, usize)> {
    vec![(0, 1), (1, 2), (2, 3), (0, 3)]
}

/// Communication path 1–2–3–4.
pub fn path4_links() -> Vec<(usize, usize)> {
    vec![(0, 1), (1, 2), (2, 3)]
}

/// Physical incidence `D` (`ν × μ`): `−1` where a line leaves a node and
/// `+1` where it enters, so that `D I` is the net current injected by the
/// lines.
pub fn line_incidence(lines: &[(usize, usize)], nodes: usize) -> Result<crate::numerics::Matrix, PlantError> {
    Ok(-crate::controllers::incidence_matrix(lines, nodes)?)
}
