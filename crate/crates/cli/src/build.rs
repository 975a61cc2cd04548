//! Plants and controller gains assembled from scenario and parameter files.

use krasovskii::controllers::{incidence_matrix, ConsensusSpec, StabilizerSpec};
use krasovskii::numerics::{diag, Matrix, Vector};
use krasovskii::plants::boost::{boost_equilibrium, BoostNetwork};
use krasovskii::plants::buck::BuckNetwork;
use krasovskii::plants::{line_incidence, LoadStep};

use crate::scenario::{
    load_boost_params, load_buck_params, ConfigError, Gain, LinesSection, Scenario, ScheduleSection,
};

fn vector(v: &[f64]) -> Vector {
    Vector::from_column_slice(v)
}

fn invalid(e: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid(e.to_string())
}

/// Converts one-based node pairs to zero-based ones.
fn zero_based(edges: &[[usize; 2]], nodes: usize, what: &str) -> Result<Vec<(usize, usize)>, ConfigError> {
    edges
        .iter()
        .map(|&[a, b]| {
            if a == 0 || b == 0 || a > nodes || b > nodes {
                Err(ConfigError::Invalid(format!(
                    "{what} edge ({a}, {b}) must use node numbers 1..={nodes}"
                )))
            } else {
                Ok((a - 1, b - 1))
            }
        })
        .collect()
}

fn lines(section: &LinesSection, nodes: usize) -> Result<(Matrix, Vector, Vector), ConfigError> {
    let edges = zero_based(&section.edges, nodes, "line")?;
    let d = line_incidence(&edges, nodes).map_err(invalid)?;
    Ok((d, vector(&section.resistance), vector(&section.inductance)))
}

fn step(s: &Option<ScheduleSection>) -> Option<LoadStep> {
    s.as_ref().map(|s| LoadStep {
        time: s.time,
        factor: s.factor,
    })
}

fn params_path(scenario: &Scenario) -> Result<std::path::PathBuf, ConfigError> {
    scenario
        .parameters_path()
        .ok_or_else(|| invalid("plant.parameters is required"))
}

pub fn boost_network(scenario: &Scenario) -> Result<BoostNetwork, ConfigError> {
    let p = load_boost_params(&params_path(scenario)?)?;
    let nodes = p.nodes.source_inductance.len();
    let (incidence, line_resistance, line_inductance) = lines(&p.lines, nodes)?;
    let net = BoostNetwork {
        source_inductance: vector(&p.nodes.source_inductance),
        capacitance: vector(&p.nodes.capacitance),
        load_conductance: vector(&p.loads.conductance),
        load_current: vector(&p.loads.current),
        source_voltage: vector(&p.nodes.source_voltage),
        line_inductance,
        line_resistance,
        incidence,
        load_step: step(&p.schedule),
    };
    net.validate().map_err(invalid)?;
    Ok(net)
}

pub fn buck_network(scenario: &Scenario) -> Result<BuckNetwork, ConfigError> {
    let p = load_buck_params(&params_path(scenario)?)?;
    let nodes = p.nodes.inductance.len();
    let (incidence, line_resistance, line_inductance) = lines(&p.lines, nodes)?;
    let dim = 2 * nodes + line_inductance.len();
    let net = BuckNetwork {
        resistance: vector(&p.nodes.resistance),
        inductance: vector(&p.nodes.inductance),
        capacitance: vector(&p.nodes.capacitance),
        line_resistance,
        line_inductance,
        load_conductance: diag(&vector(&p.loads.conductance)),
        load_current: vector(&p.loads.current),
        load_power: vector(&p.loads.power),
        incidence,
        disturbance: p.disturbance.as_deref().map_or_else(|| Vector::zeros(dim), vector),
        power_step: step(&p.schedule),
    };
    if net.resistance.len() != nodes {
        return Err(invalid(format!(
            "resistance has {} entries, expected {nodes}",
            net.resistance.len()
        )));
    }
    net.validate().map_err(invalid)?;
    Ok(net)
}

fn required<'a>(g: &'a Option<Gain>, what: &str) -> Result<&'a Gain, ConfigError> {
    g.as_ref()
        .ok_or_else(|| ConfigError::Invalid(format!("controller.{what} is required")))
}

fn diagonal_gain(g: &Option<Gain>, m: usize, what: &str) -> Result<Matrix, ConfigError> {
    Ok(diag(&vector(&required(g, what)?.expand(m, what)?)))
}

pub fn v_star(scenario: &Scenario, nodes: usize) -> Result<Vector, ConfigError> {
    Ok(vector(&required(&scenario.controller.v_star, "v_star")?.expand(nodes, "v_star")?))
}

/// Stabilizer with `u*` from the boost equilibrium at the voltage reference.
pub fn boost_spec(scenario: &Scenario, net: &BoostNetwork) -> Result<StabilizerSpec, ConfigError> {
    let nu = net.nodes();
    let eq = boost_equilibrium(net, &v_star(scenario, nu)?).map_err(invalid)?;
    let c = &scenario.controller;
    StabilizerSpec::new(diagonal_gain(&c.k1, nu, "k1")?, diagonal_gain(&c.k2, nu, "k2")?, eq.u)
        .map_err(invalid)
}

/// Communication graph of the consensus controller; the path through all
/// nodes when none is given.
pub fn communication(scenario: &Scenario, nodes: usize) -> Result<Matrix, ConfigError> {
    let edges = match &scenario.controller.communication {
        Some(e) => zero_based(e, nodes, "communication")?,
        None => (1..nodes).map(|i| (i - 1, i)).collect(),
    };
    incidence_matrix(&edges, nodes).map_err(invalid)
}

pub fn consensus_spec(scenario: &Scenario, nodes: usize) -> Result<ConsensusSpec, ConfigError> {
    let c = &scenario.controller;
    ConsensusSpec::new(
        communication(scenario, nodes)?,
        diagonal_gain(&c.m, nodes, "m")?,
        diagonal_gain(&c.k, nodes, "k")?,
    )
    .map_err(invalid)
}
