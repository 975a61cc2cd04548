//! The `simulate`, `verify`, `equilibrium` and `compare` commands.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::ValueEnum;
use krasovskii::dynamics::{
    default_fine_delta, format_value, reference_continuous_simulate, ContinuousDynamics, Trajectory,
};
use krasovskii::numerics::{sup_norm, Vector};
use krasovskii::passivity::AUDIT_TOLERANCE;
use krasovskii::plants::boost::{boost_equilibrium, BoostContinuousLoop};
use krasovskii::plants::buck::{buck_equilibrium, BuckContinuousLoop};
use krasovskii::plants::lph::LinearPHS;
use rand::Rng;

use crate::build;
use crate::error::CliError;
use crate::report::{Metric, RunReport};
use crate::scenario::{ConfigError, ControllerKind, PlantKind, Scenario};
use crate::suites::{self, Batch, MICROGRID_AUDIT_TOLERANCE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Krasovskii,
    Stabilizer,
    Consensus,
    Implications,
}

/// Command-line overrides of scenario values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub delta: Option<f64>,
    pub horizon: Option<f64>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub tolerance: Option<f64>,
}

pub fn load_scenario(path: &Path, o: &Overrides) -> Result<Scenario, CliError> {
    if !path.is_file() {
        return Err(ConfigError::Invalid(format!("scenario file {} does not exist", path.display())).into());
    }
    let mut s = Scenario::load(path)?;
    if let Some(d) = o.delta {
        s.simulation.delta = d;
        if s.simulation.fine_delta.is_some_and(|f| f > d) {
            s.simulation.fine_delta = None;
        }
    }
    if let Some(h) = o.horizon {
        s.simulation.horizon = h;
    }
    if let Some(seed) = o.seed {
        s.seed = seed;
    }
    if let Some(dir) = &o.out_dir {
        s.output.dir = Some(dir.clone());
    }
    s.validate()?;
    if let Some(p) = s.parameters_path() {
        if !p.is_file() {
            return Err(ConfigError::Invalid(format!("parameter file {} does not exist", p.display())).into());
        }
    }
    Ok(s)
}

/// Output directory: the scenario's (relative to the scenario file) or
/// `out/<name>` next to it.
pub fn output_dir(s: &Scenario) -> PathBuf {
    match &s.output.dir {
        Some(d) => s.resolve(d),
        None => s.base_dir.join("out").join(&s.name),
    }
}

fn create(dir: &Path, name: &str) -> Result<(BufWriter<File>, PathBuf), CliError> {
    let io = |path: &Path, source| CliError::Output {
        path: path.to_path_buf(),
        source,
    };
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let path = dir.join(name);
    let f = File::create(&path).map_err(|e| io(&path, e))?;
    Ok((BufWriter::new(f), path))
}

fn write_file<F>(dir: &Path, name: &str, report: &mut RunReport, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let (mut w, path) = create(dir, name)?;
    body(&mut w)
        .and_then(|_| w.flush())
        .map_err(|source| CliError::Output {
            path: path.clone(),
            source,
        })?;
    report.files.push(path.display().to_string());
    Ok(())
}

/// `k,t,<prefix>_i,...` rows; shorter series leave their cells empty.
fn write_series<W: Write>(mut w: W, delta: f64, series: &[(&str, &[Vector])]) -> std::io::Result<()> {
    let mut header = vec!["k".to_string(), "t".to_string()];
    for (name, s) in series {
        let width = s.first().map_or(0, |v| v.len());
        header.extend((0..width).map(|i| format!("{name}_{i}")));
    }
    writeln!(w, "{}", header.join(","))?;
    let rows = series.iter().map(|(_, s)| s.len()).max().unwrap_or(0);
    for k in 0..rows {
        let mut row = vec![k.to_string(), format_value(k as f64 * delta)];
        for (_, s) in series {
            let width = s.first().map_or(0, |v| v.len());
            match s.get(k) {
                Some(v) => row.extend(v.iter().map(|x| format_value(*x))),
                None => row.extend(std::iter::repeat_n(String::new(), width)),
            }
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

fn write_trajectory(dir: &Path, traj: &Trajectory, report: &mut RunReport) -> Result<(), CliError> {
    write_file(dir, "trajectory.csv", report, |w| traj.write_csv(w))
}

fn write_report(dir: &Path, name: &str, report: &mut RunReport) -> Result<(), CliError> {
    let (mut w, path) = create(dir, name)?;
    report
        .write_csv(&mut w)
        .and_then(|_| w.flush())
        .map_err(|source| CliError::Output {
            path: path.clone(),
            source,
        })?;
    report.files.push(path.display().to_string());
    Ok(())
}

fn microgrid_tolerance(o: &Overrides) -> f64 {
    o.tolerance.unwrap_or(MICROGRID_AUDIT_TOLERANCE)
}

/// Runs the scenario's closed loop and writes `trajectory.csv`,
/// `controller.csv` and `report.csv`.
pub fn simulate(s: &Scenario, o: &Overrides) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let dir = output_dir(s);
    let delta = s.simulation.delta;
    let mut report = match s.plant.kind {
        PlantKind::Boost => {
            let out = suites::boost_closed_loop(s, microgrid_tolerance(o))?;
            let mut r = out.report;
            write_trajectory(&dir, &out.run.trajectory, &mut r)?;
            let (w, z) = suites::boost_controller_sequences(&out.net, &out.run, &out.spec.u_star);
            let applied = out.run.trajectory.inputs();
            write_file(&dir, "controller.csv", &mut r, |f| {
                write_series(f, delta, &[("u", applied), ("w", &w), ("z", &z)])
            })?;
            r
        }
        PlantKind::Buck => {
            let out = suites::buck_closed_loop(s, microgrid_tolerance(o))?;
            let mut r = out.report;
            let traj = out.run.plant.clone().with_outputs(out.outputs.clone())?;
            write_trajectory(&dir, &traj, &mut r)?;
            write_file(&dir, "controller.csv", &mut r, |f| {
                write_series(
                    f,
                    delta,
                    &[("u", &out.run.designed), ("rho", &out.run.controller_states)],
                )
            })?;
            r
        }
        PlantKind::Lph => simulate_lph(s, &dir)?,
    };
    report.elapsed = Some(start.elapsed());
    write_report(&dir, "report.csv", &mut report)?;
    Ok(report)
}

/// Closed loop of the first instance of the random batch.
fn simulate_lph(s: &Scenario, dir: &Path) -> Result<RunReport, CliError> {
    let b = Batch::from_scenario(s)?;
    let mut r = RunReport::default();
    r.metric("instance", Metric::Count(0));
    r.metric("steps", Metric::Count(b.steps));
    match s.controller.kind {
        ControllerKind::Stabilizer => {
            let o = suites::stabilizer_instance(&b, 0)?;
            r.metric("state_dim", Metric::Count(o.plant.state_dim()));
            r.metric("input_dim", Metric::Count(o.plant.input_dim()));
            r.value("as_condition", o.well_posedness);
            r.value("spectral_radius", o.spectral_radius);
            r.value("terminal_error", o.error);
            r.value("controller_identity_max", o.identity);
            write_trajectory(dir, &o.run.plant, &mut r)?;
            write_file(dir, "controller.csv", &mut r, |f| {
                write_series(f, b.delta, &[("u", &o.run.designed)])
            })?;
        }
        ControllerKind::Consensus => {
            let [o, _] = suites::consensus_instance(&b, 0)?;
            r.metric("state_dim", Metric::Count(o.plant.state_dim()));
            r.metric("input_dim", Metric::Count(o.plant.input_dim()));
            r.value("ac_condition", o.ac_condition);
            r.value("step_jacobian_condition", o.jacobian_condition);
            r.value("spectral_radius", o.full_radius);
            r.value("restricted_spectral_radius", o.restricted_radius);
            r.value("terminal_disagreement", o.disagreement);
            r.value("controller_identity_max", o.identity);
            write_trajectory(dir, &o.run.plant, &mut r)?;
            write_file(dir, "controller.csv", &mut r, |f| {
                write_series(
                    f,
                    b.delta,
                    &[("u", &o.run.designed), ("rho", &o.run.controller_states)],
                )
            })?;
        }
        ControllerKind::BoostShifted => unreachable!("rejected by scenario validation"),
    }
    Ok(r)
}

fn unsupported(suite: Suite, kind: PlantKind) -> CliError {
    ConfigError::Invalid(format!("suite {suite:?} is not available for plant {kind:?}")).into()
}

fn keep(mut r: RunReport, names: &[&str]) -> RunReport {
    r.checks.retain(|c| names.contains(&c.name.as_str()));
    r
}

/// Runs an audit suite and writes `verify-<suite>.csv`. The returned
/// report may contain failed checks; the caller maps them to exit code 1.
pub fn verify(s: &Scenario, suite: Suite, o: &Overrides) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let mut report = match (s.plant.kind, suite) {
        (PlantKind::Lph, _) => {
            let b = Batch::from_scenario(s)?;
            let tol = o.tolerance.unwrap_or(AUDIT_TOLERANCE);
            match suite {
                Suite::Krasovskii => suites::krasovskii_suite(&b, tol)?,
                Suite::Implications => suites::implications_suite(&b, tol)?,
                Suite::Stabilizer => suites::stabilizer_suite(&b)?,
                Suite::Consensus => suites::consensus_suite(&b)?,
            }
        }
        (PlantKind::Boost, Suite::Krasovskii) => {
            keep(suites::boost_closed_loop(s, microgrid_tolerance(o))?.report, &["energy_balance"])
        }
        (PlantKind::Boost, Suite::Stabilizer) => keep(
            suites::boost_closed_loop(s, microgrid_tolerance(o))?.report,
            &["voltage_regulation", "controller_identity"],
        ),
        (PlantKind::Buck, Suite::Krasovskii) => keep(
            suites::buck_closed_loop(s, microgrid_tolerance(o))?.report,
            &["energy_balance", "strict_kp"],
        ),
        (PlantKind::Buck, Suite::Consensus) => keep(
            suites::buck_closed_loop(s, microgrid_tolerance(o))?.report,
            &["voltage_average", "current_sharing", "controller_identity"],
        ),
        (kind, suite) => return Err(unsupported(suite, kind)),
    };
    report.elapsed = Some(start.elapsed());
    let name = format!("verify-{}.csv", format!("{suite:?}").to_lowercase());
    write_report(&output_dir(s), &name, &mut report)?;
    Ok(report)
}

fn text(v: &Vector) -> Metric {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.10}")).collect();
    Metric::Text(format!("[{}]", parts.join("; ")))
}

/// Steady state of the scenario's plant and the residual of the
/// continuous-time field there.
pub fn equilibrium(s: &Scenario) -> Result<RunReport, CliError> {
    let mut r = RunReport::default();
    match s.plant.kind {
        PlantKind::Boost => {
            let net = build::boost_network(s)?;
            let eq = boost_equilibrium(&net, &build::v_star(s, net.nodes())?)?;
            let x = eq.state(&net);
            let residual = sup_norm(&net.eval(0.0, &x, &eq.u).component_mul(&net.mass()));
            r.metric("i_s", text(&eq.i_s));
            r.metric("v", text(&eq.v));
            r.metric("i", text(&eq.i));
            r.metric("u", text(&eq.u));
            r.value("residual", residual);
        }
        PlantKind::Buck => {
            let net = build::buck_network(s)?;
            let (x, u) = buck_equilibrium(&net, &build::v_star(s, net.nodes())?)?;
            let residual = sup_norm(&net.field(0.0, &x, &u)?);
            r.metric("phi", text(&x.rows(0, net.nodes()).into_owned()));
            r.metric("q", text(&net.charge(&x)));
            r.metric("phi_t", text(&x.rows(2 * net.nodes(), net.lines()).into_owned()));
            r.metric("voltages", text(&net.voltages(&x)));
            r.metric("currents", text(&net.currents(&x)));
            r.metric("u", text(&u));
            r.value("residual", residual);
        }
        PlantKind::Lph => {
            let b = Batch::from_scenario(s)?;
            let (p, u_star) = lph_reference(&b);
            let x = p.equilibrium(&u_star)?;
            let residual = sup_norm(&(p.system_matrix() * &x + &p.b * &u_star + &p.d));
            r.metric("state_dim", Metric::Count(p.state_dim()));
            r.metric("x", text(&x));
            r.metric("u", text(&u_star));
            r.value("residual", residual);
        }
    }
    Ok(r)
}

/// Instance drawn from the scenario seed with a random `u*`.
pub fn lph_reference(b: &Batch) -> (LinearPHS, Vector) {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(b.seed);
    let n = rng.random_range(1..=b.max_state_dim);
    let m = rng.random_range(1..=b.max_input_dim.min(n));
    let p = LinearPHS::random(&mut rng, n, m);
    let u = Vector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
    (p, u)
}

fn fine_delta(s: &Scenario) -> f64 {
    s.simulation
        .fine_delta
        .unwrap_or_else(|| default_fine_delta(s.simulation.horizon, s.simulation.delta))
}

fn stack(parts: &[&Vector]) -> Vector {
    Vector::from_iterator(
        parts.iter().map(|p| p.len()).sum(),
        parts.iter().flat_map(|p| p.iter().copied()),
    )
}

/// Sampled closed loop against the continuous-time loop integrated on a
/// fine grid; writes `compare.csv` with both input series.
pub fn compare(s: &Scenario, o: &Overrides) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let delta = s.simulation.delta;
    let fine = fine_delta(s);
    let settings = suites::newton(s);
    let horizon = s.steps() as f64 * delta;
    let (sampled, continuous, mut r) = match s.plant.kind {
        PlantKind::Boost => {
            let out = suites::boost_closed_loop(s, microgrid_tolerance(o))?;
            let n = out.net.state_dim();
            let nu = out.net.nodes();
            let x0 = &out.run.trajectory.states()[0];
            let cont = BoostContinuousLoop {
                net: out.net.clone(),
                spec: out.spec.clone(),
            };
            let reference = reference_continuous_simulate(
                &cont,
                &stack(&[x0, &out.spec.u_star]),
                &Vector::zeros(0),
                horizon,
                fine,
                delta,
                &settings,
            )?;
            let u_cont: Vec<Vector> = reference.states().iter().map(|z| z.rows(n, nu).into_owned()).collect();
            let v_err = (reference.final_state().rows(nu, nu) - &out.v_star).amax();
            let mut r = RunReport::default();
            r.value("continuous_terminal_voltage_error", v_err);
            r.value(
                "sampled_terminal_voltage_error",
                (out.run.trajectory.final_state().rows(nu, nu) - &out.v_star).amax(),
            );
            (out.run.trajectory.inputs().to_vec(), u_cont, r)
        }
        PlantKind::Buck => {
            let out = suites::buck_closed_loop(s, microgrid_tolerance(o))?;
            let n = out.net.state_dim();
            let nu = out.net.nodes();
            let x0 = &out.run.plant.states()[0];
            let y0 = out.net.currents(x0);
            let cont = BuckContinuousLoop {
                net: out.net.clone(),
                spec: out.spec.clone(),
                v_star: out.v_star.clone(),
            };
            let reference = reference_continuous_simulate(
                &cont,
                &stack(&[x0, &Vector::zeros(nu), &y0]),
                &Vector::zeros(0),
                horizon,
                fine,
                delta,
                &settings,
            )?;
            let u_cont: Vec<Vector> = reference.states().iter().map(|z| z.rows(n, nu).into_owned()).collect();
            let y_end = out.net.currents(&reference.final_state().rows(0, n).into_owned());
            let mut r = RunReport::default();
            r.value(
                "continuous_terminal_relative_disagreement",
                out.spec.disagreement(&y_end).norm() / y_end.norm(),
            );
            r.value(
                "sampled_terminal_relative_disagreement",
                out.spec.disagreement(out.outputs.last().expect("nonempty")).norm()
                    / out.outputs.last().expect("nonempty").norm(),
            );
            (out.run.designed.clone(), u_cont, r)
        }
        PlantKind::Lph => {
            return Err(ConfigError::Invalid("compare needs a boost or buck scenario".into()).into())
        }
    };
    let aligned = sampled.len().min(continuous.len());
    let gap = suites::sequence_gap(&sampled[..aligned], &continuous[..aligned]);
    r.metric("steps", Metric::Count(s.steps()));
    r.value("fine_delta", fine);
    r.value("input_gap_max", gap);
    r.value(
        "input_gap_terminal",
        sup_norm(&(&sampled[aligned - 1] - &continuous[aligned - 1])),
    );
    let dir = output_dir(s);
    write_file(&dir, "compare.csv", &mut r, |f| {
        write_series(f, delta, &[("u_sampled", &sampled), ("u_continuous", &continuous)])
    })?;
    r.elapsed = Some(start.elapsed());
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_rows_pad_shorter_columns() {
        let a = vec![Vector::from_element(2, 1.0); 3];
        let b = vec![Vector::from_element(1, 2.0); 2];
        let mut out = Vec::new();
        write_series(&mut out, 0.5, &[("a", &a), ("b", &b)]).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,t,a_0,a_1,b_0");
        assert_eq!(lines.len(), 4);
        assert!(lines[3].ends_with(','));
    }
}
