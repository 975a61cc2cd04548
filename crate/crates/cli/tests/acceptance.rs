//! Acceptance criteria 1–8 at their pinned tolerances.
//!
//! Each criterion prints one `PASS`/`FAIL` line with its measured values
//! and runtime; run with `cargo test --test acceptance -- --nocapture` to
//! see them. The test fails if any criterion fails.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use krasovskii::dynamics::SampledModel;
use krasovskii::numerics::{Matrix, NewtonSettings, Vector};
use krasovskii::passivity::shifted_output;
use krasovskii::plants::buck::{buck_equilibrium, buck_pi_jacobian, BuckNetwork};
use krasovskii::plants::lph::LinearPHS;
use krasovskii_cli::suites::{self, Batch};
use krasovskii_cli::{Check, RunReport, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    Scenario::load(&path).expect("bundled scenario")
}

struct Outcome {
    checks: Vec<Check>,
    elapsed: Duration,
}

impl Outcome {
    fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn finish(n: usize, title: &str, mut checks: Vec<Check>, elapsed: Duration, budget_s: Option<f64>) -> Outcome {
    if let Some(b) = budget_s {
        checks.push(Check::below("runtime_s", elapsed.as_secs_f64(), b));
    }
    let out = Outcome { checks, elapsed };
    let detail: Vec<String> = out
        .checks
        .iter()
        .map(|c| format!("{}={:.3e}/{:.1e}", c.name, c.value, c.limit))
        .collect();
    println!(
        "criterion {n} {}: {title} [{}] ({:.2} s)",
        if out.passed() { "PASS" } else { "FAIL" },
        detail.join(", "),
        out.elapsed.as_secs_f64()
    );
    for c in out.checks.iter().filter(|c| !c.passed) {
        println!("    {c}");
    }
    out
}

fn named(r: &RunReport, name: &str) -> Check {
    r.checks
        .iter()
        .find(|c| c.name == name)
        .cloned()
        .unwrap_or_else(|| panic!("report has no check {name}"))
}

fn random_batch(instances: usize) -> Batch {
    let mut b = Batch::from_scenario(&scenario("lph_random.scenario")).unwrap();
    b.instances = instances;
    b
}

fn criterion_1() -> Outcome {
    let b = random_batch(100);
    assert!(b.max_state_dim <= 8 && b.max_input_dim <= 3 && b.audit_steps == 200);
    let t = Instant::now();
    let r = suites::krasovskii_suite(&b, 1e-9).unwrap();
    finish(
        1,
        "Krasovskii energy equality on 100 random linear PHS",
        vec![named(&r, "krasovskii_equality")],
        t.elapsed(),
        Some(10.0),
    )
}

fn criterion_2() -> Outcome {
    let b = random_batch(100);
    let t = Instant::now();
    let r = suites::implications_suite(&b, 1e-9).unwrap();
    finish(
        2,
        "incremental, constructed-Krasovskii and shifted audits",
        vec![
            named(&r, "incremental"),
            named(&r, "constructed_krasovskii"),
            named(&r, "shifted"),
        ],
        t.elapsed(),
        Some(30.0),
    )
}

fn criterion_3() -> (Outcome, Check) {
    let b = random_batch(50);
    assert_eq!(b.steps, 2000);
    let t = Instant::now();
    let r = suites::stabilizer_suite(&b).unwrap();
    let out = finish(
        3,
        "stabilizer certification on 50 random instances",
        vec![
            named(&r, "well_posed"),
            named(&r, "spectral_radius"),
            named(&r, "convergence"),
        ],
        t.elapsed(),
        Some(20.0),
    );
    (out, named(&r, "controller_identity"))
}

fn criterion_4() -> (Outcome, Check) {
    let s = scenario("boost4.scenario");
    assert_eq!(s.simulation.settle_time, Some(2.5));
    let t = Instant::now();
    let r = suites::boost_closed_loop(&s, 1e-8).unwrap().report;
    let out = finish(
        4,
        "boost voltage regulation to 380 V with +50 % load step",
        vec![named(&r, "voltage_regulation"), named(&r, "energy_balance")],
        t.elapsed(),
        Some(60.0),
    );
    (out, named(&r, "controller_identity"))
}

fn criterion_5() -> (Outcome, Check) {
    let s = scenario("buck4.scenario");
    let t = Instant::now();
    let r = suites::buck_closed_loop(&s, 1e-8).unwrap().report;
    let out = finish(
        5,
        "buck current sharing and voltage average",
        vec![
            named(&r, "current_sharing"),
            named(&r, "voltage_average"),
            named(&r, "strict_kp"),
            named(&r, "energy_balance"),
        ],
        t.elapsed(),
        Some(120.0),
    );
    (out, named(&r, "controller_identity"))
}

fn criterion_6() -> Outcome {
    let b = Batch::from_scenario(&scenario("lph_consensus.scenario")).unwrap();
    let t = Instant::now();
    let mut disagreement: f64 = 0.0;
    let mut radius: f64 = 0.0;
    let mut ill_posed = 0;
    let mut distinct = 0;
    for i in 0..b.instances {
        let [a, c] = suites::consensus_instance(&b, i).unwrap();
        distinct += usize::from(a.plant.d == c.plant.d);
        for o in [&a, &c] {
            disagreement = disagreement.max(o.disagreement);
            if o.ac_condition < 1e12 && krasovskii::numerics::is_positive_definite(&o.spec.k).unwrap() {
                radius = radius.max(o.restricted_radius);
            } else {
                ill_posed += 1;
            }
        }
    }
    finish(
        6,
        "consensus under two constant disturbances",
        vec![
            Check::holds("distinct_disturbances", distinct),
            Check::at_most("terminal_disagreement", disagreement, 1e-8),
            Check::below("restricted_spectral_radius", radius, 1.0),
            Check::holds("ill_posed", ill_posed),
        ],
        t.elapsed(),
        None,
    )
}

/// Central differences of `f` at `z` with step `h (1 + |z_j|)`.
fn central_jacobian<F: Fn(&Vector) -> Vector>(f: F, z: &Vector, h: f64) -> Matrix {
    let rows = f(z).len();
    let mut jac = Matrix::zeros(rows, z.len());
    for j in 0..z.len() {
        let step = h * (1.0 + z[j].abs());
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[j] += step;
        zm[j] -= step;
        jac.set_column(j, &((f(&zp) - f(&zm)) / (2.0 * step)));
    }
    jac
}

fn criterion_8() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);

    // Cayley closed form of the midpoint step on linear systems.
    let mut cayley: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(1..=8);
        let m = rng.random_range(1..=3.min(n));
        let p = LinearPHS::random(&mut rng, n, m);
        let delta = rng.random_range(0.01..1.0);
        let a = (&p.j - &p.r) * &p.h;
        let eye = Matrix::identity(n, n);
        let left = (&eye - &a * (delta / 2.0)).try_inverse().unwrap();
        let x = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let u = Vector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let closed = &left * ((&eye + &a * (delta / 2.0)) * &x + &p.b * &u * delta);
        let stepped = p.sampled(delta).unwrap().step(0, &x, &u, &NewtonSettings::default()).unwrap();
        cayley = cayley.max((stepped - &closed).amax() / (1.0 + closed.amax()));
    }

    // Analytic buck step Jacobian against central differences.
    let net = BuckNetwork::representative();
    let delta = 1e-4;
    let sys = net.sampled(delta).unwrap();
    let (x_eq, u_eq) = buck_equilibrium(&net, &Vector::from_element(4, 380.0)).unwrap();
    let mut jacobian: f64 = 0.0;
    for _ in 0..20 {
        let x = x_eq.map(|v| v * rng.random_range(0.8..1.2));
        let x_next = x.map(|v| v * rng.random_range(0.99..1.01));
        let nominal = buck_pi_jacobian(&net, &x_next, delta).unwrap();
        let fd0 = central_jacobian(|z| sys.step_residual(0, &x, z, &u_eq), &x_next, 1e-7);
        let k = rng.random_range(0..20_000);
        let scheduled = sys.jacobian_next(k, &x, &x_next, &u_eq);
        let fd = central_jacobian(|z| sys.step_residual(k, &x, z, &u_eq), &x_next, 1e-7);
        jacobian = jacobian
            .max((&nominal - &fd0).amax() / fd0.amax())
            .max((&scheduled - &fd).amax() / fd.amax());
    }

    // Quadrature of the shifted output for φ(u) = a u²/2 + b u:
    // δ ∫₀¹ φ'(s u + (1 − s) u*) ds = δ (a (u + u*)/2 + b).
    let mut quadrature: f64 = 0.0;
    for _ in 0..100 {
        let (a, b) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let (u, u_star) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let delta = rng.random_range(0.01..1.0);
        let y = shifted_output(
            |v: &Vector| v.map(|w| a * w + b),
            &Vector::from_element(1, u),
            &Vector::from_element(1, u_star),
            delta,
            krasovskii::passivity::SHIFTED_OUTPUT_ORDER,
        )
        .unwrap();
        let exact = delta * (a * (u + u_star) / 2.0 + b);
        quadrature = quadrature.max((y[0] - exact).abs());
    }

    finish(
        8,
        "Cayley map, buck Jacobian and quadrature oracles",
        vec![
            Check::at_most("cayley", cayley, 1e-12),
            Check::at_most("buck_jacobian", jacobian, 1e-5),
            Check::at_most("quadrature", quadrature, 1e-12),
        ],
        t.elapsed(),
        None,
    )
}

#[test]
fn acceptance_criteria() {
    let c1 = criterion_1();
    let c2 = criterion_2();
    let (c3, id3) = criterion_3();
    let (c4, id4) = criterion_4();
    let (c5, id5) = criterion_5();
    let c6 = criterion_6();
    let c7 = finish(
        7,
        "controller identities on the runs of criteria 3-5",
        [("stabilizer", id3), ("boost", id4), ("buck", id5)]
            .into_iter()
            .map(|(name, c)| Check::at_most(name, c.value, 1e-10))
            .collect(),
        Duration::ZERO,
        None,
    );
    let c8 = criterion_8();
    let failed: Vec<usize> = [&c1, &c2, &c3, &c4, &c5, &c6, &c7, &c8]
        .iter()
        .enumerate()
        .filter(|(_, o)| !o.passed())
        .map(|(i, _)| i + 1)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
