use krasovskii::dynamics::{simulate_open_loop, Scheme, Trajectory};
use krasovskii::numerics::*;
use krasovskii::passivity::*;
use krasovskii::plants::lph::LinearPHS;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

#[test]
fn storage_functions_evaluate_their_quadratics() {
    let h = Matrix::from_diagonal(&Vector::from_vec(vec![2.0, 4.0]));
    let a = Vector::from_vec(vec![1.0, 1.0]);
    let b = Vector::from_vec(vec![0.0, 2.0]);
    let zero = Vector::zeros(0);
    assert_eq!(StorageFunction::KrasovskiiQuadratic(h.clone()).evaluate(&zero, &zero, &a), 3.0);
    assert_eq!(StorageFunction::IncrementalQuadratic(h.clone()).evaluate(&a, &b, &zero), 3.0);
    let shifted = StorageFunction::ShiftedQuadratic { u_star: b.clone(), k2: h };
    assert_eq!(shifted.evaluate(&a, &zero, &zero), 3.0);
}

#[test]
fn certificate_follows_definiteness() {
    let eye = Matrix::identity(2, 2);
    let semi = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 0.0]));
    let indefinite = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, -1.0]));
    assert_eq!(lph_krasovskii_certificate(&eye, &eye).unwrap(), KpCertificate::StrictlyKrasovskiiPassive);
    assert_eq!(lph_krasovskii_certificate(&eye, &semi).unwrap(), KpCertificate::KrasovskiiPassive);
    assert_eq!(lph_krasovskii_certificate(&eye, &indefinite).unwrap(), KpCertificate::Inconclusive);
}

#[test]
fn a_violated_inequality_is_reported() {
    let xs: Vec<Vector> = (0..5).map(|k| Vector::from_element(1, k as f64)).collect();
    let us = vec![Vector::zeros(1); 4];
    let traj = Trajectory::new(1.0, Scheme::ImplicitMidpoint, xs, us).unwrap();
    let grow = StorageFunction::IncrementalQuadratic(Matrix::identity(1, 1));
    let report = audit_shifted(
        &traj,
        |x: &Vector| grow.evaluate(x, &Vector::zeros(1), &Vector::zeros(0)),
        &vec![Vector::zeros(1); 5],
        &Vector::zeros(1),
        &Vector::zeros(1),
        1e-9,
    )
    .unwrap();
    assert!(!report.satisfied);
    assert!(report.max_violation > 0.1);
}

#[test]
fn loose_solver_tolerance_is_rejected() {
    let p = LinearPHS::random(&mut ChaCha8Rng::seed_from_u64(4), 2, 1);
    let sys = p.sampled(0.1).unwrap();
    let settings = NewtonSettings::default().with_tolerance(1e-6);
    let traj = simulate_open_loop(&sys, &Vector::zeros(2), &vec![Vector::zeros(1); 5], &settings).unwrap();
    let r = audit_krasovskii(&traj, &p.krasovskii_storage(), &p.supply_rate(), AuditMode::Equality, 1e-9);
    assert!(matches!(r, Err(PassivityError::ToleranceTooLoose { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linear_phs_satisfy_the_krasovskii_equality(
        seed in any::<u64>(),
        n in 1usize..=8,
        m in 1usize..=3,
        delta in 0.01f64..1.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = LinearPHS::random(&mut rng, n, m.min(n));
        let sys = p.sampled(delta).unwrap();
        let inputs: Vec<Vector> = (0..40).map(|_| random_vector(&mut rng, p.input_dim())).collect();
        let x0 = random_vector(&mut rng, n);
        let traj = simulate_open_loop(&sys, &x0, &inputs, &NewtonSettings::default()).unwrap();
        let report = audit_krasovskii(&traj, &p.krasovskii_storage(), &p.supply_rate(), AuditMode::Equality, 1e-9).unwrap();
        prop_assert!(report.satisfied, "max violation {}", report.max_violation);
        prop_assert_eq!(report.skipped.len(), 1);
    }

    #[test]
    fn shifted_output_of_a_quadratic_is_the_secant(
        a in -5.0f64..5.0,
        b in -5.0f64..5.0,
        u in -3.0f64..3.0,
        u_star in -3.0f64..3.0,
        delta in 0.01f64..1.0,
    ) {
        let phi = |v: &Vector| 0.5 * a * v[0] * v[0] + b * v[0];
        let y = shifted_output(
            |v: &Vector| fd_gradient(phi, v),
            &Vector::from_element(1, u),
            &Vector::from_element(1, u_star),
            delta,
            SHIFTED_OUTPUT_ORDER,
        )
        .unwrap();
        let secant = if (u - u_star).abs() > 1e-3 {
            delta * (phi(&Vector::from_element(1, u)) - phi(&Vector::from_element(1, u_star))) / (u - u_star)
        } else {
            delta * (a * (u + u_star) / 2.0 + b)
        };
        prop_assert!((y[0] - secant).abs() < 1e-7);
    }

    #[test]
    fn constructed_storage_is_the_incremental_storage_of_one_step(
        seed in any::<u64>(),
        n in 1usize..=6,
        delta in 0.01f64..1.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = LinearPHS::random(&mut rng, n, 1);
        let map = p.explicit_map(delta).unwrap();
        let x = random_vector(&mut rng, n);
        let u = random_vector(&mut rng, 1);
        let stepper = map.clone();
        let step: StepMap = std::sync::Arc::new(move |x: &Vector, u: &Vector| stepper.apply(x, u));
        let s_k = construct_kp_from_ip(StorageFunction::IncrementalQuadratic(p.h.clone()), step, delta);
        let direct = map.krasovskii_storage(&p.h, &x, &u, delta);
        let constructed = s_k.evaluate(&x, &u, &Vector::zeros(0));
        prop_assert!((direct - constructed).abs() < 1e-10 * (1.0 + direct));
    }
}
