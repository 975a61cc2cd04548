use krasovskii::controllers::{incidence_matrix, stabilizer_residual, ConsensusSpec, KrasovskiiOutput, StabilizerSpec};
use krasovskii::dynamics::SampledModel;
use krasovskii::numerics::*;
use krasovskii::plants::boost::{boost_equilibrium, BoostNetwork};
use krasovskii::plants::buck::{buck_equilibrium, BuckNetwork};
use krasovskii::plants::lph::*;
use krasovskii::plants::{line_incidence, ring4_lines, PlantError};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn boost_duty_ratio_is_one_minus_the_voltage_ratio() {
    let net = BoostNetwork::representative();
    let v = Vector::from_element(4, 380.0);
    let eq = boost_equilibrium(&net, &v).unwrap();
    for (u, vs) in eq.u.iter().zip(net.source_voltage.iter()) {
        assert!((u - (1.0 - vs / 380.0)).abs() < 1e-15);
    }
    let sys = net.sampled(1e-4).unwrap();
    let x = eq.state(&net);
    let r = sys.step_residual(0, &x, &x, &eq.u);
    assert!(r.amax() < 1e-9 * (1.0 + x.amax()), "{r}");
}

#[test]
fn boost_rejects_references_below_the_source() {
    let net = BoostNetwork::representative();
    let r = boost_equilibrium(&net, &Vector::from_element(4, 100.0));
    assert!(matches!(r, Err(PlantError::InfeasibleReference { .. })));
}

#[test]
fn buck_steady_state_is_a_fixed_point() {
    let net = BuckNetwork::representative();
    let v = Vector::from_element(4, 380.0);
    let (x, u) = buck_equilibrium(&net, &v).unwrap();
    assert!((net.voltages(&x) - &v).amax() < 1e-12);
    let sys = net.sampled(1e-4).unwrap();
    let r = sys.step_residual(0, &x, &x, &u);
    assert!(r.amax() < 1e-8, "{r}");
}

#[test]
fn ring_incidence_has_zero_column_sums() {
    let d = line_incidence(&ring4_lines(), 4).unwrap();
    assert_eq!(d.shape(), (4, 4));
    for j in 0..4 {
        assert_eq!(d.column(j).sum(), 0.0);
    }
}

fn path_spec(rng: &mut ChaCha8Rng, m: usize) -> ConsensusSpec {
    let edges: Vec<(usize, usize)> = (0..m - 1).map(|i| (i, i + 1)).collect();
    let e = incidence_matrix(&edges, m).unwrap();
    let diag = |rng: &mut ChaCha8Rng| Matrix::from_diagonal(&Vector::from_fn(m, |_, _| rng.random_range(0.5..2.0)));
    let (mm, k) = (diag(rng), diag(rng));
    ConsensusSpec::new(e, mm, k).unwrap()
}

proptest! {
    #[test]
    fn consensus_loop_conserves_its_functional(
        seed in any::<u64>(),
        n in 2usize..=6,
        m in 2usize..=3,
        delta in 0.05f64..0.5,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = m.min(n);
        let d = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let plant = LinearPHS::random(&mut rng, n, m).with_disturbance(d).unwrap();
        let spec = path_spec(&mut rng, m);
        let (phi, c) = consensus_one_step_map(&plant, &spec, delta).unwrap();
        let ell = consensus_conserved_functional(&plant, &spec).unwrap();
        let drift = phi.transpose() * &ell - &ell;
        prop_assert!(drift.amax() < 1e-9 * (1.0 + ell.amax()), "{}", drift.amax());
        prop_assert!(ell.dot(&c).abs() < 1e-9 * (1.0 + c.amax()));
    }

    #[test]
    fn complement_basis_is_orthonormal_and_orthogonal(v in prop::collection::vec(-1.0f64..1.0, 2..8)) {
        let v = Vector::from_vec(v);
        prop_assume!(v.norm() > 1e-3);
        let q = complement_basis(&v);
        prop_assert_eq!(q.ncols(), v.len() - 1);
        let gram = q.transpose() * &q;
        prop_assert!((gram - Matrix::identity(v.len() - 1, v.len() - 1)).amax() < 1e-12);
        prop_assert!((q.transpose() * &v).amax() < 1e-12 * v.norm());
    }

    #[test]
    fn stabilizer_map_satisfies_both_step_relations(
        seed in any::<u64>(),
        n in 1usize..=6,
        m in 1usize..=3,
        delta in 0.05f64..1.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = m.min(n);
        let plant = LinearPHS::random(&mut rng, n, m);
        let spec = StabilizerSpec::uniform(rng.random_range(0.5..2.0), rng.random_range(0.5..2.0), Vector::zeros(m)).unwrap();
        let map = stabilizer_one_step_map(&plant, &spec.k1, &spec.k2, delta).unwrap();
        let s = Vector::from_fn(2 * n + m, |_, _| rng.random_range(-1.0..1.0));
        let next = &map * &s;
        let (x0, x1, u0) = (s.rows(0, n).into_owned(), s.rows(n, n).into_owned(), s.rows(2 * n, m).into_owned());
        prop_assert_eq!(next.rows(0, n).into_owned(), x1.clone());
        let (x2, u1) = (next.rows(n, n).into_owned(), next.rows(2 * n, m).into_owned());
        let plant_residual = plant.sampled(delta).unwrap().step_residual(0, &x1, &x2, &u1);
        let z = plant.krasovskii_output(delta, &x0, &x1, &x2);
        let controller_residual = stabilizer_residual(&spec, delta, &u0, &u1, &z).unwrap();
        let scale = 1.0 + next.amax() / delta;
        prop_assert!(plant_residual.amax() < 1e-10 * scale);
        prop_assert!(controller_residual.amax() < 1e-10 * scale);
    }
}
