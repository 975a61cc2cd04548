use krasovskii::numerics::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

#[test]
fn newton_reports_a_vanishing_jacobian() {
    let r = solve_newton(
        |z: &Vector| z.map(|v| v * v + 1.0),
        |z: &Vector| Matrix::from_diagonal(&(z * 2.0)),
        &Vector::from_element(1, 0.0),
        &NewtonSettings::default(),
    );
    assert!(matches!(r, Err(NumericsError::SingularJacobian { .. })));
}

#[test]
fn newton_finds_the_square_root() {
    let z = solve_newton(
        |z: &Vector| z.map(|v| v * v - 2.0),
        |z: &Vector| Matrix::from_diagonal(&(z * 2.0)),
        &Vector::from_element(1, 1.0),
        &NewtonSettings::default(),
    )
    .unwrap();
    assert!((z[0] - 2f64.sqrt()).abs() < 1e-14);
}

#[test]
fn quadrature_rejects_unsupported_orders() {
    assert!(GaussLegendre::new(1).is_err());
    assert!(GaussLegendre::new(17).is_err());
}

#[test]
fn block_diag_places_blocks() {
    let a = Matrix::identity(2, 2) * 3.0;
    let b = Matrix::from_element(1, 1, -1.0);
    let d = block_diag(&[&a, &b]);
    assert_eq!(d, Matrix::from_diagonal(&Vector::from_vec(vec![3.0, 3.0, -1.0])));
}

proptest! {
    #[test]
    fn newton_solves_affine_maps(seed in any::<u64>(), n in 1usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(&mut rng, n, n) + Matrix::identity(n, n) * (n as f64 + 1.0);
        let b = Vector::from_fn(n, |_, _| rng.random_range(-10.0..10.0));
        let z = solve_newton(|z| &a * z - &b, |_| a.clone(), &Vector::zeros(n), &NewtonSettings::default()).unwrap();
        let exact = a.clone().lu().solve(&b).unwrap();
        prop_assert!((z - exact).amax() < 1e-12);
    }

    #[test]
    fn spectral_radius_is_homogeneous(seed in any::<u64>(), n in 1usize..=6, c in -4.0f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(&mut rng, n, n);
        let rho = spectral_radius(&a).unwrap();
        let scaled = spectral_radius(&(&a * c)).unwrap();
        prop_assert!((scaled - c.abs() * rho).abs() <= 1e-10 * (1.0 + scaled));
    }

    #[test]
    fn spectral_radius_of_a_triangular_matrix(diag in prop::collection::vec(-3.0f64..3.0, 1..6)) {
        let n = diag.len();
        let t = Matrix::from_fn(n, n, |i, j| if i == j { diag[i] } else if i < j { 0.5 } else { 0.0 });
        let expected = diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        prop_assert!((spectral_radius(&t).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn weighted_norm_matches_the_factor(seed in any::<u64>(), n in 1usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = random_matrix(&mut rng, n, n);
        let p = &l * l.transpose();
        let x = Vector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let direct = weighted_norm_sq(&x, &p).unwrap();
        let factored = (l.transpose() * &x).norm_squared();
        prop_assert!((direct - factored).abs() < 1e-12 * (1.0 + factored));
        prop_assert!(direct >= -1e-12);
    }

    #[test]
    fn quadrature_is_exact_up_to_degree_2n_minus_1(
        order in 2usize..=16,
        coeffs in prop::collection::vec(-1.0f64..1.0, 32),
    ) {
        let degree = 2 * order - 1;
        let c = &coeffs[..=degree];
        let value = gauss_legendre_integrate(|s| c.iter().rev().fold(0.0, |acc, a| acc * s + a), order).unwrap();
        let exact: f64 = c.iter().enumerate().map(|(i, a)| a / (i as f64 + 1.0)).sum();
        prop_assert!((value - exact).abs() < 1e-13);
    }

    #[test]
    fn quadrature_weights_sum_to_one(order in 2usize..=16) {
        let rule = GaussLegendre::new(order).unwrap();
        prop_assert!((rule.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        prop_assert!(rule.nodes.iter().all(|s| *s > 0.0 && *s < 1.0));
    }
}
