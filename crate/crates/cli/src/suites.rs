//! Verification suites on seeded random linear port-Hamiltonian batches and
//! on the microgrid closed loops.
//!
//! Random instances are independent and run on the rayon pool; instance `i`
//! draws from ChaCha stream `i` of the scenario seed, so results do not
//! depend on the number of worker threads.

use std::sync::Arc;
use std::time::Instant;

use krasovskii::controllers::{
    check_assumption_oc, check_assumption_stab, incidence_matrix, ConsensusLoop, ConsensusSpec,
    KrasovskiiOutput, PassiveOutput, StabilizerLoop, StabilizerSpec,
};
use krasovskii::dynamics::{simulate_closed_loop, simulate_open_loop, ClosedLoopRun, Trajectory};
use krasovskii::numerics::{spectral_radius, sup_norm, Matrix, NewtonSettings, Vector};
use krasovskii::passivity::{
    audit_incremental, audit_krasovskii, audit_shifted, buck_strict_kp_condition,
    construct_kp_from_ip, shifted_output, AuditMode, StepMap, StorageFunction,
    SHIFTED_OUTPUT_ORDER,
};
use krasovskii::plants::boost::{boost_equilibrium, simulate_boost_shifted, BoostNetwork, BoostRun};
use krasovskii::plants::buck::{buck_pi_jacobian, simulate_buck_consensus, BuckNetwork};
use krasovskii::plants::lph::{
    build_ac, build_as, consensus_conserved_functional, consensus_one_step_map,
    consensus_step_jacobian, restricted_spectral_radius, stabilizer_one_step_map, LinearPHS,
};
use krasovskii::numerics::condition_number;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::build;
use crate::error::CliError;
use crate::report::{Check, Metric, RunReport};
use crate::scenario::{ConfigError, Scenario};

/// Controller identities hold exactly up to solver roundoff.
pub const IDENTITY_TOLERANCE: f64 = 1e-10;
/// Distance to the equilibrium required of stabilizer runs.
pub const CONVERGENCE_TOLERANCE: f64 = 1e-8;
/// Terminal weighted disagreement required of linear consensus runs.
pub const CONSENSUS_TOLERANCE: f64 = 1e-8;
/// Default energy-balance tolerance of the microgrid audits.
pub const MICROGRID_AUDIT_TOLERANCE: f64 = 1e-8;
/// Allowed voltage deviation (V) after the settling time.
pub const VOLTAGE_TOLERANCE: f64 = 0.5;
/// Terminal `|EᵀMy| / |y|` required of the buck network.
pub const SHARING_TOLERANCE: f64 = 1e-3;

/// Seeded batch of random instances.
#[derive(Debug, Clone)]
pub struct Batch {
    pub seed: u64,
    pub instances: usize,
    pub max_state_dim: usize,
    pub max_input_dim: usize,
    pub audit_steps: usize,
    pub audit_delta: f64,
    pub disturbance: f64,
    /// Sampling period and length of the closed-loop runs.
    pub delta: f64,
    pub steps: usize,
    pub newton: NewtonSettings,
}

impl Batch {
    pub fn from_scenario(s: &Scenario) -> Result<Self, ConfigError> {
        let r = s
            .random
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("scenario has no [random] section".into()))?;
        Ok(Self {
            seed: s.seed,
            instances: r.instances,
            max_state_dim: r.max_state_dim,
            max_input_dim: r.max_input_dim,
            audit_steps: r.steps,
            audit_delta: r.audit_delta,
            disturbance: r.disturbance,
            delta: s.simulation.delta,
            steps: s.steps(),
            newton: newton(s),
        })
    }

    fn rng(&self, i: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(i as u64);
        rng
    }

    /// `(n, m)` with `1 ≤ m ≤ min(n, max_input_dim)` and `m ≥ min_inputs`.
    fn dims<G: Rng>(&self, rng: &mut G, min_inputs: usize) -> (usize, usize) {
        let m_hi = self.max_input_dim.max(min_inputs);
        let m = rng.random_range(min_inputs..=m_hi);
        let n = rng.random_range(m..=self.max_state_dim.max(m));
        (n, m)
    }
}

pub fn newton(s: &Scenario) -> NewtonSettings {
    NewtonSettings::default().with_tolerance(s.simulation.newton_tolerance)
}

fn uniform<G: Rng>(rng: &mut G, n: usize, scale: f64) -> Vector {
    Vector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

/// `LLᵀ/m + floor·I` with `L` uniform on `[−1, 1]`.
pub fn random_pd<G: Rng>(rng: &mut G, m: usize, floor: f64) -> Matrix {
    let l = Matrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
    &l * l.transpose() / m as f64 + Matrix::identity(m, m) * floor
}

fn random_inputs<G: Rng>(rng: &mut G, m: usize, steps: usize) -> Vec<Vector> {
    (0..steps).map(|_| uniform(rng, m, 1.0)).collect()
}

fn max_of(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, |a: f64, v| if v.is_nan() { f64::NAN } else { a.max(v) })
}

/// Open-loop trajectory of instance `i` under random inputs.
fn open_loop<G: Rng>(
    b: &Batch,
    rng: &mut G,
    p: &LinearPHS,
) -> Result<Trajectory, CliError> {
    let x0 = uniform(rng, p.state_dim(), 1.0);
    let inputs = random_inputs(rng, p.input_dim(), b.audit_steps);
    let sys = p.sampled(b.audit_delta)?;
    Ok(simulate_open_loop(&sys, &x0, &inputs, &b.newton)?)
}

/// Largest normalized residual of the Krasovskii energy equality on
/// instance `i`.
pub fn krasovskii_instance(b: &Batch, i: usize, tolerance: f64) -> Result<f64, CliError> {
    let mut rng = b.rng(i);
    let (n, m) = b.dims(&mut rng, 1);
    let p = LinearPHS::random(&mut rng, n, m);
    let traj = open_loop(b, &mut rng, &p)?;
    let rep = audit_krasovskii(
        &traj,
        &p.krasovskii_storage(),
        &p.supply_rate(),
        AuditMode::Equality,
        tolerance,
    )?;
    Ok(rep.max_violation)
}

pub fn krasovskii_suite(b: &Batch, tolerance: f64) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let worst: Vec<f64> = (0..b.instances)
        .into_par_iter()
        .map(|i| krasovskii_instance(b, i, tolerance))
        .collect::<Result<_, _>>()?;
    let mut r = RunReport::default();
    r.metric("instances", Metric::Count(b.instances));
    r.metric("steps_per_instance", Metric::Count(b.audit_steps));
    let max = max_of(worst);
    r.value("krasovskii_equality_max", max);
    r.check(Check::at_most("krasovskii_equality", max, tolerance));
    r.elapsed = Some(start.elapsed());
    Ok(r)
}

/// Normalized worst residuals of the incremental, constructed-Krasovskii
/// and shifted audits on instance `i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImplicationOutcome {
    pub incremental: f64,
    pub constructed: f64,
    pub shifted: f64,
}

pub fn implications_instance(b: &Batch, i: usize, tolerance: f64) -> Result<ImplicationOutcome, CliError> {
    let mut rng = b.rng(i);
    let (n, m) = b.dims(&mut rng, 1);
    let p = LinearPHS::random(&mut rng, n, m);
    let delta = b.audit_delta;
    let with_outputs = |t: Trajectory| -> Result<Trajectory, CliError> {
        let ys = (0..t.len() - 1)
            .map(|k| Ok(p.output(&t.sigma_op(k)?)))
            .collect::<Result<Vec<_>, CliError>>()?;
        Ok(t.with_outputs(ys)?)
    };
    let ta = with_outputs(open_loop(b, &mut rng, &p)?)?;
    let tb = with_outputs(open_loop(b, &mut rng, &p)?)?;
    let incremental = audit_incremental(
        &ta,
        &tb,
        &StorageFunction::IncrementalQuadratic(p.h.clone()),
        tolerance,
    )?;

    let map = p.explicit_map(delta)?;
    let step_map = map.clone();
    let step: StepMap = Arc::new(move |x, u| step_map.apply(x, u));
    let s_k = construct_kp_from_ip(StorageFunction::IncrementalQuadratic(p.h.clone()), step, delta);
    let constructed = audit_krasovskii(&ta, &s_k, &p.supply_rate(), AuditMode::Inequality, tolerance)?;

    let u_star = uniform(&mut rng, m, 1.0);
    let xs = ta.states();
    let ys = ta
        .inputs()
        .iter()
        .enumerate()
        .map(|(k, u)| {
            shifted_output(
                |v| map.shifted_gradient(&p.h, &xs[k], v, &u_star, delta),
                u,
                &u_star,
                delta,
                SHIFTED_OUTPUT_ORDER,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let storage = |x: &Vector| delta * delta * map.krasovskii_storage(&p.h, x, &u_star, delta);
    let shifted = audit_shifted(&ta, storage, &ys, &u_star, &Vector::zeros(m), tolerance)?;
    Ok(ImplicationOutcome {
        incremental: incremental.max_violation,
        constructed: constructed.max_violation,
        shifted: shifted.max_violation,
    })
}

pub fn implications_suite(b: &Batch, tolerance: f64) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let out: Vec<ImplicationOutcome> = (0..b.instances)
        .into_par_iter()
        .map(|i| implications_instance(b, i, tolerance))
        .collect::<Result<_, _>>()?;
    let mut r = RunReport::default();
    r.metric("instances", Metric::Count(b.instances));
    for (name, value) in [
        ("incremental", max_of(out.iter().map(|o| o.incremental))),
        ("constructed_krasovskii", max_of(out.iter().map(|o| o.constructed))),
        ("shifted", max_of(out.iter().map(|o| o.shifted))),
    ] {
        r.value(format!("{name}_max"), value);
        r.check(Check::at_most(name, value, tolerance));
    }
    r.elapsed = Some(start.elapsed());
    Ok(r)
}

pub struct StabilizerOutcome {
    pub plant: LinearPHS,
    pub spec: StabilizerSpec,
    pub x_star: Vector,
    pub run: ClosedLoopRun,
    /// Condition number of `A_s`.
    pub well_posedness: f64,
    pub spectral_radius: f64,
    /// `|x_N − x*| + |u_N − u*|`.
    pub error: f64,
    /// Worst normalized residual of the stabilizer identity.
    pub identity: f64,
}

pub fn stabilizer_instance(b: &Batch, i: usize) -> Result<StabilizerOutcome, CliError> {
    let mut rng = b.rng(i);
    let (n, m) = b.dims(&mut rng, 1);
    let p = LinearPHS::random(&mut rng, n, m);
    let k1 = random_pd(&mut rng, m, 0.1);
    let k2 = random_pd(&mut rng, m, 0.5);
    let u_star = uniform(&mut rng, m, 1.0);
    let x0 = uniform(&mut rng, n, 1.0);
    let x_star = p.equilibrium(&u_star)?;
    let a_s = build_as(&p, &k1, &k2, b.delta)?;
    let rho = spectral_radius(&stabilizer_one_step_map(&p, &k1, &k2, b.delta)?)?;
    let spec = StabilizerSpec::new(k1, k2, u_star.clone())?;
    let sys = p.sampled(b.delta)?;
    let run = simulate_closed_loop(
        &sys,
        &StabilizerLoop { spec: &spec, output: &p },
        &x0,
        &Vector::zeros(m),
        None,
        b.steps,
        &b.newton,
        None,
    )?;
    let u_last = run.designed.last().expect("at least one step");
    let error = (run.plant.final_state() - &x_star).norm() + (u_last - &u_star).norm();
    let xs = run.plant.states();
    let z: Vec<Vector> = (0..xs.len() - 2)
        .map(|k| p.krasovskii_output(b.delta, &xs[k], &xs[k + 1], &xs[k + 2]))
        .collect();
    let identity = check_assumption_stab(&spec, b.delta, &run.designed, &z, IDENTITY_TOLERANCE)?.max_violation;
    Ok(StabilizerOutcome {
        plant: p,
        spec,
        x_star,
        run,
        well_posedness: a_s.condition,
        spectral_radius: rho,
        error,
        identity,
    })
}

pub fn stabilizer_suite(b: &Batch) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let out: Vec<(f64, f64, f64, bool)> = (0..b.instances)
        .into_par_iter()
        .map(|i| {
            stabilizer_instance(b, i).map(|o| {
                let posed = o.well_posedness < krasovskii::numerics::INVERTIBILITY_CONDITION_LIMIT;
                (o.spectral_radius, o.error, o.identity, posed)
            })
        })
        .collect::<Result<_, _>>()?;
    let mut r = RunReport::default();
    r.metric("instances", Metric::Count(b.instances));
    r.metric("steps_per_instance", Metric::Count(b.steps));
    let rho = max_of(out.iter().map(|o| o.0));
    let err = max_of(out.iter().map(|o| o.1));
    let identity = max_of(out.iter().map(|o| o.2));
    r.value("spectral_radius_max", rho);
    r.value("terminal_error_max", err);
    r.value("controller_identity_max", identity);
    r.check(Check::holds("well_posed", out.iter().filter(|o| !o.3).count()));
    r.check(Check::below("spectral_radius", rho, 1.0));
    r.check(Check::at_most("convergence", err, CONVERGENCE_TOLERANCE));
    r.check(Check::at_most("controller_identity", identity, IDENTITY_TOLERANCE));
    r.elapsed = Some(start.elapsed());
    Ok(r)
}

pub struct ConsensusOutcome {
    pub plant: LinearPHS,
    pub spec: ConsensusSpec,
    pub run: ClosedLoopRun,
    /// Condition numbers of the displayed `A_c` and of the step Jacobian.
    pub ac_condition: f64,
    pub jacobian_condition: f64,
    pub full_radius: f64,
    /// Spectral radius on the complement of the conserved direction.
    pub restricted_radius: f64,
    /// `|ℓᵀΦ − ℓᵀ|` for the conserved functional `ℓ`.
    pub conserved_drift: f64,
    /// Terminal `|EᵀM y|`.
    pub disagreement: f64,
    pub identity: f64,
}

/// Consensus loop of instance `i` under `d = 0` and under a random constant
/// disturbance, from the same initial state.
pub fn consensus_instance(b: &Batch, i: usize) -> Result<[ConsensusOutcome; 2], CliError> {
    let mut rng = b.rng(i);
    let (n, m) = b.dims(&mut rng, 2);
    let p = LinearPHS::random(&mut rng, n, m);
    let edges: Vec<(usize, usize)> = (1..m).map(|j| (j - 1, j)).collect();
    let e = incidence_matrix(&edges, m)?;
    let weights = Vector::from_fn(m, |_, _| rng.random_range(0.5..2.0));
    let k = random_pd(&mut rng, m, 0.2);
    let spec = ConsensusSpec::new(e, Matrix::from_diagonal(&weights), k)?;
    let x0 = uniform(&mut rng, n, 1.0);
    let d = uniform(&mut rng, n, b.disturbance.max(f64::MIN_POSITIVE));
    let run_one = |d: Vector| -> Result<ConsensusOutcome, CliError> {
        let plant = p.clone().with_disturbance(d)?;
        let (phi, _) = consensus_one_step_map(&plant, &spec, b.delta)?;
        let ell = consensus_conserved_functional(&plant, &spec)?;
        let sys = plant.sampled(b.delta)?;
        let run = simulate_closed_loop(
            &sys,
            &ConsensusLoop { spec: &spec, output: &plant },
            &x0,
            &Vector::zeros(m),
            None,
            b.steps,
            &b.newton,
            None,
        )?;
        let xs = run.plant.states();
        let ys: Vec<Vector> = (0..xs.len() - 1)
            .map(|k| plant.passive_output(&((&xs[k] + &xs[k + 1]) * 0.5)))
            .collect();
        let disagreement = spec.disagreement(ys.last().expect("nonempty")).norm();
        let identity = check_assumption_oc(
            &spec,
            b.delta,
            &ys,
            &run.controller_states,
            &run.designed,
            IDENTITY_TOLERANCE,
        )?
        .max_violation;
        Ok(ConsensusOutcome {
            ac_condition: build_ac(&plant, &spec, b.delta)?.condition,
            jacobian_condition: consensus_step_jacobian(&plant, &spec, b.delta)?.condition,
            full_radius: spectral_radius(&phi)?,
            restricted_radius: restricted_spectral_radius(&phi, &ell)?,
            conserved_drift: (phi.transpose() * &ell - &ell).amax(),
            disagreement,
            identity,
            plant,
            spec: spec.clone(),
            run,
        })
    };
    Ok([run_one(Vector::zeros(n))?, run_one(d)?])
}

/// Restricted radius, disagreement, identity gap, conserved drift and
/// well-posedness of one consensus run.
type ConsensusSummary = (f64, f64, f64, f64, bool);

pub fn consensus_suite(b: &Batch) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let out: Vec<[ConsensusSummary; 2]> = (0..b.instances)
        .into_par_iter()
        .map(|i| {
            consensus_instance(b, i).map(|pair| {
                pair.map(|o| {
                    let posed = o.ac_condition < krasovskii::numerics::INVERTIBILITY_CONDITION_LIMIT
                        && o.jacobian_condition < krasovskii::numerics::INVERTIBILITY_CONDITION_LIMIT;
                    (o.restricted_radius, o.disagreement, o.identity, o.conserved_drift, posed)
                })
            })
        })
        .collect::<Result<_, _>>()?;
    let flat: Vec<_> = out.iter().flatten().collect();
    let mut r = RunReport::default();
    r.metric("instances", Metric::Count(b.instances));
    r.metric("runs", Metric::Count(flat.len()));
    let rho = max_of(flat.iter().map(|o| o.0));
    let dis = max_of(flat.iter().map(|o| o.1));
    let identity = max_of(flat.iter().map(|o| o.2));
    let drift = max_of(flat.iter().map(|o| o.3));
    r.value("restricted_spectral_radius_max", rho);
    r.value("terminal_disagreement_max", dis);
    r.value("controller_identity_max", identity);
    r.value("conserved_drift_max", drift);
    r.check(Check::holds("well_posed", flat.iter().filter(|o| !o.4).count()));
    r.check(Check::below("restricted_spectral_radius", rho, 1.0));
    r.check(Check::at_most("consensus", dis, CONSENSUS_TOLERANCE));
    r.check(Check::at_most("controller_identity", identity, IDENTITY_TOLERANCE));
    r.elapsed = Some(start.elapsed());
    Ok(r)
}

/// First sample index at or after `t`.
fn index_at(t: f64, delta: f64) -> usize {
    (t / delta - 1e-9).ceil().max(0.0) as usize
}

fn settle_index(s: &Scenario) -> Option<usize> {
    let t = s.simulation.settle_time?;
    (t <= s.simulation.horizon).then(|| index_at(t, s.simulation.delta))
}

pub struct BoostOutcome {
    pub net: BoostNetwork,
    pub spec: StabilizerSpec,
    pub v_star: Vector,
    pub run: BoostRun,
    pub report: RunReport,
}

/// Initial state: explicit, or a multiple of the nominal equilibrium.
pub fn boost_initial_state(s: &Scenario, net: &BoostNetwork, v_star: &Vector) -> Result<Vector, CliError> {
    match &s.initial.state {
        Some(x) if x.len() == net.state_dim() => Ok(Vector::from_column_slice(x)),
        Some(x) => Err(ConfigError::Invalid(format!(
            "initial state has {} entries, expected {}",
            x.len(),
            net.state_dim()
        ))
        .into()),
        None => Ok(boost_equilibrium(net, v_star)?.state(net) * s.initial.state_scale.unwrap_or(1.0)),
    }
}

/// Internal controller values `w_j` and delayed outputs `z_j` of a boost
/// run, aligned so that `w_{j+1}` is the update from `(w_j, z_j)`.
pub fn boost_controller_sequences(net: &BoostNetwork, run: &BoostRun, u_init: &Vector) -> (Vec<Vector>, Vec<Vector>) {
    let tr = &run.trajectory;
    let delta = tr.delta();
    let mut w = vec![u_init.clone()];
    w.extend(tr.inputs().iter().skip(2).cloned());
    let xs = tr.states();
    let z = (0..xs.len().saturating_sub(2))
        .map(|j| net.krasovskii_output(delta, &xs[j], &xs[j + 1], &xs[j + 2]))
        .collect();
    (w, z)
}

pub fn boost_closed_loop(s: &Scenario, audit_tolerance: f64) -> Result<BoostOutcome, CliError> {
    let start = Instant::now();
    let net = build::boost_network(s)?;
    let spec = build::boost_spec(s, &net)?;
    let v_star = build::v_star(s, net.nodes())?;
    let x0 = boost_initial_state(s, &net, &v_star)?;
    let delta = s.simulation.delta;
    let run = simulate_boost_shifted(&net, &spec, &x0, delta, s.steps(), &newton(s))?;
    let nu = net.nodes();
    let tr = &run.trajectory;
    let v_err = |k: usize| (tr.states()[k].rows(nu, nu) - &v_star).amax();
    let mut r = RunReport::default();
    r.metric("steps", Metric::Count(s.steps()));
    r.metric("clamp_events", Metric::Count(run.clamp_events));
    let terminal = v_err(tr.len() - 1);
    r.value("terminal_voltage_error", terminal);
    let regulation = match settle_index(s) {
        Some(k0) => {
            let worst = max_of((k0..tr.len()).map(v_err));
            r.value("voltage_error_after_settle", worst);
            worst
        }
        None => {
            r.metric(
                "voltage_error_after_settle",
                Metric::Skipped("settle_time unset or beyond the horizon".into()),
            );
            terminal
        }
    };
    let audit = audit_krasovskii(
        tr,
        &net.krasovskii_storage(),
        &net.supply_rate(),
        AuditMode::Equality,
        audit_tolerance,
    )?;
    r.value("energy_balance_max", audit.max_violation);
    r.value("energy_balance_abs_max", audit.max_abs_residual());
    r.metric("energy_balance_skipped", Metric::Count(audit.skipped.len()));
    let (w, z) = boost_controller_sequences(&net, &run, &spec.u_star);
    let identity = check_assumption_stab(&spec, delta, &w, &z, IDENTITY_TOLERANCE)?.max_violation;
    r.value("controller_identity_max", identity);
    r.check(Check::at_most("voltage_regulation", regulation, VOLTAGE_TOLERANCE));
    r.check(Check::at_most("energy_balance", audit.max_violation, audit_tolerance));
    r.check(Check::at_most("controller_identity", identity, IDENTITY_TOLERANCE));
    r.elapsed = Some(start.elapsed());
    Ok(BoostOutcome {
        net,
        spec,
        v_star,
        run,
        report: r,
    })
}

pub struct BuckOutcome {
    pub net: BuckNetwork,
    pub spec: ConsensusSpec,
    pub v_star: Vector,
    pub run: ClosedLoopRun,
    /// Passive outputs `y_k = L⁻¹σφ_k`.
    pub outputs: Vec<Vector>,
    pub report: RunReport,
}

pub fn buck_closed_loop(s: &Scenario, audit_tolerance: f64) -> Result<BuckOutcome, CliError> {
    let start = Instant::now();
    let net = build::buck_network(s)?;
    let nu = net.nodes();
    let spec = build::consensus_spec(s, nu)?;
    let v_star = build::v_star(s, nu)?;
    if s.initial.state.is_some() || s.initial.state_scale.is_some() {
        return Err(ConfigError::Invalid(
            "buck runs start at the steady state of the reference; remove [initial]".into(),
        )
        .into());
    }
    let delta = s.simulation.delta;
    let run = simulate_buck_consensus(&net, &spec, &v_star, delta, s.steps(), &newton(s))?;
    let tr = &run.plant;
    let xs = tr.states();
    let outputs: Vec<Vector> = (0..xs.len() - 1)
        .map(|k| net.passive_output(&((&xs[k] + &xs[k + 1]) * 0.5)))
        .collect();
    let v_mean = v_star.mean();
    let avg_err = |k: usize| (net.voltages(&xs[k]).mean() - v_mean).abs();

    let mut r = RunReport::default();
    r.metric("steps", Metric::Count(s.steps()));
    r.value("initial_condition", run.initial_condition);
    r.value("terminal_voltage_average_error", avg_err(xs.len() - 1));
    let average = match settle_index(s) {
        Some(k0) => {
            let worst = max_of((k0..xs.len()).map(avg_err));
            r.value("voltage_average_error_after_settle", worst);
            worst
        }
        None => {
            r.metric(
                "voltage_average_error_after_settle",
                Metric::Skipped("settle_time unset or beyond the horizon".into()),
            );
            avg_err(xs.len() - 1)
        }
    };
    let y_last = outputs.last().expect("at least one step");
    let disagreement = spec.disagreement(y_last).norm();
    let sharing = disagreement / y_last.norm();
    r.value("terminal_disagreement", disagreement);
    r.value("terminal_current_norm", y_last.norm());
    r.value("terminal_relative_disagreement", sharing);

    let audited = xs.len().saturating_sub(2);
    let mut kp_failures = 0;
    let mut pi_condition: f64 = 0.0;
    for k in 0..audited {
        let q = |x: &Vector| net.charge(x);
        if !buck_strict_kp_condition(&q(&xs[k]), &q(&xs[k + 2]), &net, &net.load_power_at(tr.time(k)))? {
            kp_failures += 1;
        }
        pi_condition = pi_condition.max(condition_number(&buck_pi_jacobian(&net, &xs[k + 1], delta)?));
    }
    r.metric("strict_kp_steps", Metric::Count(audited));
    r.metric("strict_kp_failures", Metric::Count(kp_failures));
    r.value("pi_condition_max", pi_condition);

    let audit = audit_krasovskii(
        tr,
        &net.krasovskii_storage(),
        &net.supply_rate(),
        AuditMode::Equality,
        audit_tolerance,
    )?;
    r.value("energy_balance_max", audit.max_violation);
    r.value("energy_balance_abs_max", audit.max_abs_residual());
    r.metric("energy_balance_skipped", Metric::Count(audit.skipped.len()));
    let identity = check_assumption_oc(
        &spec,
        delta,
        &outputs,
        &run.controller_states,
        &run.designed,
        IDENTITY_TOLERANCE,
    )?
    .max_violation;
    r.value("controller_identity_max", identity);
    r.value("max_step_residual", {
        let sys = net.sampled(delta)?;
        krasovskii::dynamics::max_step_residual(&sys, tr)
    });

    r.check(Check::at_most("voltage_average", average, VOLTAGE_TOLERANCE));
    r.check(Check::at_most("current_sharing", sharing, SHARING_TOLERANCE));
    r.check(Check::holds("strict_kp", kp_failures));
    r.check(Check::at_most("energy_balance", audit.max_violation, audit_tolerance));
    r.check(Check::at_most("controller_identity", identity, IDENTITY_TOLERANCE));
    r.elapsed = Some(start.elapsed());
    Ok(BuckOutcome {
        net,
        spec,
        v_star,
        run,
        outputs,
        report: r,
    })
}

/// Sup-norm distance between two equally long vector sequences.
pub fn sequence_gap(a: &[Vector], b: &[Vector]) -> f64 {
    max_of(a.iter().zip(b).map(|(x, y)| sup_norm(&(x - y))))
}
