//! Linear port-Hamiltonian systems `ẋ = (J − R)Hx + Bu + d`, `y = BᵀHx`.

use rand::Rng;

use crate::controllers::{ConsensusSpec, KrasovskiiOutput, PassiveOutput};
use crate::dynamics::{LinearDynamics, SampledSystem};
use crate::numerics::{
    condition_number, is_positive_semidefinite, spectral_radius, Matrix, Vector,
    INVERTIBILITY_CONDITION_LIMIT,
};
use crate::passivity::{KrasovskiiWindow, StorageFunction, SupplyRate};

use super::{check_len, PlantError};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearPHS {
    pub j: Matrix,
    pub r: Matrix,
    pub h: Matrix,
    pub b: Matrix,
    pub d: Vector,
}

impl LinearPHS {
    pub fn new(j: Matrix, r: Matrix, h: Matrix, b: Matrix) -> Result<Self, PlantError> {
        let n = j.nrows();
        for (what, m) in [("J", &j), ("R", &r), ("H", &h)] {
            check_len(what, n, m.nrows())?;
            check_len(what, n, m.ncols())?;
        }
        check_len("B rows", n, b.nrows())?;
        let skew = (&j + j.transpose()).amax();
        if skew > 1e-12 * j.amax().max(1.0) {
            return Err(PlantError::InvariantViolation(format!(
                "J is not skew-symmetric (|J + Jᵀ| = {skew:e})"
            )));
        }
        if !is_positive_semidefinite(&r)? {
            return Err(PlantError::InvariantViolation("R is not positive semidefinite".into()));
        }
        if !is_positive_semidefinite(&h)? {
            return Err(PlantError::InvariantViolation("H is not positive semidefinite".into()));
        }
        if crate::controllers::numerical_rank(&b) != b.ncols() {
            return Err(PlantError::InvariantViolation("B does not have full column rank".into()));
        }
        Ok(Self {
            j,
            r,
            h,
            b,
            d: Vector::zeros(n),
        })
    }

    pub fn with_disturbance(mut self, d: Vector) -> Result<Self, PlantError> {
        check_len("disturbance", self.state_dim(), d.len())?;
        self.d = d;
        Ok(self)
    }

    /// Random instance with `H, R ≻ 0` and full-column-rank `B`.
    pub fn random<G: Rng + ?Sized>(rng: &mut G, n: usize, m: usize) -> Self {
        let mut sample = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
        let a = sample(n, n);
        let j = (&a - a.transpose()) * 0.5;
        let lr = sample(n, n);
        let r = &lr * lr.transpose() / n as f64 + Matrix::identity(n, n) * 0.1;
        let lh = sample(n, n);
        let h = &lh * lh.transpose() / n as f64 + Matrix::identity(n, n) * 0.5;
        loop {
            let b = sample(n, m);
            if crate::controllers::numerical_rank(&b) == m && condition_number(&b) < 1e6 {
                return Self::new(j, r, h, b).expect("construction satisfies the invariants");
            }
        }
    }

    pub fn state_dim(&self) -> usize {
        self.j.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// `(J − R)H`.
    pub fn system_matrix(&self) -> Matrix {
        (&self.j - &self.r) * &self.h
    }

    /// `BᵀH`.
    pub fn output_matrix(&self) -> Matrix {
        self.b.transpose() * &self.h
    }

    pub fn dynamics(&self) -> LinearDynamics {
        LinearDynamics {
            a: self.system_matrix(),
            b: self.b.clone(),
            d: self.d.clone(),
        }
    }

    pub fn sampled(&self, delta: f64) -> Result<SampledSystem<LinearDynamics>, PlantError> {
        Ok(SampledSystem::midpoint(self.dynamics(), delta)?)
    }

    /// `y = BᵀHx` evaluated at `σ_δ x_k`.
    pub fn output(&self, sigma_x: &Vector) -> Vector {
        self.output_matrix() * sigma_x
    }

    /// Explicit form of the midpoint step.
    pub fn explicit_map(&self, delta: f64) -> Result<ExplicitLinearMap, PlantError> {
        let n = self.state_dim();
        let a = self.system_matrix();
        let eye = Matrix::identity(n, n);
        let lhs = &eye / delta - &a * 0.5;
        let inv = lhs
            .clone()
            .try_inverse()
            .ok_or_else(|| PlantError::InvariantViolation("I/δ − (J − R)H/2 is singular".into()))?;
        Ok(ExplicitLinearMap {
            phi: &inv * (&eye / delta + &a * 0.5),
            gamma: &inv * &self.b,
            offset: &inv * &self.d,
        })
    }

    /// `x*` solving `(J − R)Hx* + Bu* + d = 0`.
    pub fn equilibrium(&self, u_star: &Vector) -> Result<Vector, PlantError> {
        check_len("u*", self.input_dim(), u_star.len())?;
        let rhs = -(&self.b * u_star + &self.d);
        self.system_matrix()
            .lu()
            .solve(&rhs)
            .ok_or_else(|| PlantError::InvariantViolation("(J − R)H is singular".into()))
    }

    /// `S_K = |Δ_δ x_k|²_H / 2`.
    pub fn krasovskii_storage(&self) -> StorageFunction {
        StorageFunction::KrasovskiiQuadratic(self.h.clone())
    }

    /// `z_k = BᵀH Δ_δσ_δ x_k` and `W_K = |H Δ_δσ_δ x_k|²_R`.
    pub fn supply_rate(&self) -> SupplyRate<'_> {
        SupplyRate::new(
            move |w: &KrasovskiiWindow| self.output_matrix() * w.delta_sigma_x(),
            move |w: &KrasovskiiWindow| {
                let hx = &self.h * w.delta_sigma_x();
                hx.dot(&(&self.r * &hx))
            },
        )
    }
}

impl KrasovskiiOutput for LinearPHS {
    fn krasovskii_output(&self, delta: f64, x0: &Vector, _x1: &Vector, x2: &Vector) -> Vector {
        self.output_matrix() * (x2 - x0) / (2.0 * delta)
    }

    fn krasovskii_output_jacobian(&self, delta: f64, _x0: &Vector, _x1: &Vector, _x2: &Vector) -> Matrix {
        self.output_matrix() / (2.0 * delta)
    }
}

impl PassiveOutput for LinearPHS {
    fn passive_output(&self, sigma_x: &Vector) -> Vector {
        self.output(sigma_x)
    }

    fn passive_output_jacobian(&self, _sigma_x: &Vector) -> Matrix {
        self.output_matrix()
    }
}

/// `x_{k+1} = Φ x_k + Γ u_k + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitLinearMap {
    pub phi: Matrix,
    pub gamma: Matrix,
    pub offset: Vector,
}

impl ExplicitLinearMap {
    pub fn apply(&self, x: &Vector, u: &Vector) -> Vector {
        &self.phi * x + &self.gamma * u + &self.offset
    }

    /// `Ŝ_K(x, u) = |F_δ(x, u) − x|²_H / (2δ²)`.
    pub fn krasovskii_storage(&self, h: &Matrix, x: &Vector, u: &Vector, delta: f64) -> f64 {
        let e = self.apply(x, u) - x;
        0.5 * e.dot(&(h * &e)) / (delta * delta)
    }

    /// Gradient in `u` of `Ŝ_K(F_δ(x_k, u), u*)`:
    /// `((Φ − I)Γ)ᵀ H ((Φ − I)F_δ(x_k, u) + Γu* + c) / δ²`.
    pub fn shifted_gradient(
        &self,
        h: &Matrix,
        x_k: &Vector,
        u: &Vector,
        u_star: &Vector,
        delta: f64,
    ) -> Vector {
        let n = self.phi.nrows();
        let a = &self.phi - Matrix::identity(n, n);
        let e = &a * self.apply(x_k, u) + &self.gamma * u_star + &self.offset;
        (a * &self.gamma).transpose() * (h * e) / (delta * delta)
    }
}

/// A well-posedness matrix with its conditioning.
#[derive(Debug, Clone, PartialEq)]
pub struct WellPosedness {
    pub matrix: Matrix,
    pub condition: f64,
    pub invertible: bool,
}

impl WellPosedness {
    fn new(matrix: Matrix) -> Self {
        let condition = condition_number(&matrix);
        Self {
            matrix,
            condition,
            invertible: condition < INVERTIBILITY_CONDITION_LIMIT,
        }
    }
}

fn check_gain(what: &'static str, k: &Matrix, m: usize) -> Result<(), PlantError> {
    check_len(what, m, k.nrows())?;
    check_len(what, m, k.ncols())
}

/// `A_s = [I/δ − (J − R)H/2, −B; BᵀH/(2δ), K1/δ + K2/2]`.
pub fn build_as(plant: &LinearPHS, k1: &Matrix, k2: &Matrix, delta: f64) -> Result<WellPosedness, PlantError> {
    let (n, m) = (plant.state_dim(), plant.input_dim());
    check_gain("K1", k1, m)?;
    check_gain("K2", k2, m)?;
    let mut a = Matrix::zeros(n + m, n + m);
    a.view_mut((0, 0), (n, n))
        .copy_from(&(Matrix::identity(n, n) / delta - plant.system_matrix() * 0.5));
    a.view_mut((0, n), (n, m)).copy_from(&(-&plant.b));
    a.view_mut((n, 0), (m, n))
        .copy_from(&(plant.output_matrix() / (2.0 * delta)));
    a.view_mut((n, n), (m, m)).copy_from(&(k1 / delta + k2 * 0.5));
    Ok(WellPosedness::new(a))
}

fn consensus_blocks(plant: &LinearPHS, spec: &ConsensusSpec, delta: f64, k_sign: f64) -> Result<Matrix, PlantError> {
    let (n, m) = (plant.state_dim(), plant.input_dim());
    check_len("consensus nodes", m, spec.input_dim())?;
    let g = plant.output_matrix();
    let eye_m = Matrix::identity(m, m);
    let mut a = Matrix::zeros(n + 2 * m, n + 2 * m);
    a.view_mut((0, 0), (n, n))
        .copy_from(&(Matrix::identity(n, n) / delta - plant.system_matrix() * 0.5));
    a.view_mut((0, n), (n, m)).copy_from(&(-&plant.b));
    let a12 = spec.coupling() * &g / 4.0 + &spec.k * &g / (2.0 * delta);
    a.view_mut((n, 0), (m, n)).copy_from(&a12);
    a.view_mut((n, n), (m, m)).copy_from(&(&eye_m / delta));
    a.view_mut((n, n + m), (m, m)).copy_from(&(&spec.k * (k_sign / delta)));
    a.view_mut((n + m, 0), (m, n)).copy_from(&(-&g / 4.0));
    a.view_mut((n + m, n + m), (m, m))
        .copy_from(&(&eye_m * (1.0 / delta + 0.5)));
    Ok(a)
}

/// `A_c = [I/δ − (J − R)H/2, −B, 0; A_{c,12}, I/δ, K/δ; −BᵀH/4, 0, I/δ + I/2]`
/// with `A_{c,12} = MᵀEEᵀMBᵀH/4 + KBᵀH/(2δ)`, assembled as displayed.
///
/// The Jacobian of the stacked step residual with respect to
/// `(x_{k+2}, u_{k+1}, ρ_{k+1})` carries `−K/δ` in the `ρ` column instead;
/// see [`consensus_step_jacobian`].
pub fn build_ac(plant: &LinearPHS, spec: &ConsensusSpec, delta: f64) -> Result<WellPosedness, PlantError> {
    Ok(WellPosedness::new(consensus_blocks(plant, spec, delta, 1.0)?))
}

/// Jacobian of the stacked plant and consensus residuals with respect to
/// `(x_{k+2}, u_{k+1}, ρ_{k+1})`.
pub fn consensus_step_jacobian(
    plant: &LinearPHS,
    spec: &ConsensusSpec,
    delta: f64,
) -> Result<WellPosedness, PlantError> {
    Ok(WellPosedness::new(consensus_blocks(plant, spec, delta, -1.0)?))
}

fn solve_or_singular(a: &Matrix, b: &Matrix, what: &str) -> Result<Matrix, PlantError> {
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| PlantError::InvariantViolation(format!("{what} is singular")))
}

/// One-step map of the stabilizer loop on deviations
/// `(x_k − x*, x_{k+1} − x*, u_k − u*) ↦ (x_{k+1} − x*, x_{k+2} − x*, u_{k+1} − u*)`.
pub fn stabilizer_one_step_map(
    plant: &LinearPHS,
    k1: &Matrix,
    k2: &Matrix,
    delta: f64,
) -> Result<Matrix, PlantError> {
    let (n, m) = (plant.state_dim(), plant.input_dim());
    let a_s = build_as(plant, k1, k2, delta)?;
    let mut rhs = Matrix::zeros(n + m, 2 * n + m);
    rhs.view_mut((0, n), (n, n))
        .copy_from(&(Matrix::identity(n, n) / delta + plant.system_matrix() * 0.5));
    rhs.view_mut((n, 0), (m, n))
        .copy_from(&(plant.output_matrix() / (2.0 * delta)));
    rhs.view_mut((n, 2 * n), (m, m))
        .copy_from(&(k1 / delta - k2 * 0.5));
    let next = solve_or_singular(&a_s.matrix, &rhs, "A_s")?;
    let mut map = Matrix::zeros(2 * n + m, 2 * n + m);
    map.view_mut((0, n), (n, n)).copy_from(&Matrix::identity(n, n));
    map.view_mut((n, 0), (n + m, 2 * n + m)).copy_from(&next);
    Ok(map)
}

/// Affine one-step map `s_{k+1} = Φ s_k + c` of the consensus loop on
/// `s_k = (x_k, x_{k+1}, u_k, ρ_k)`.
pub fn consensus_one_step_map(
    plant: &LinearPHS,
    spec: &ConsensusSpec,
    delta: f64,
) -> Result<(Matrix, Vector), PlantError> {
    let (n, m) = (plant.state_dim(), plant.input_dim());
    let dim = 2 * n + 2 * m;
    let t = consensus_step_jacobian(plant, spec, delta)?;
    let g = plant.output_matrix();
    let ng = spec.coupling() * &g;
    let kg = &spec.k * &g;
    let mut rhs = Matrix::zeros(n + 2 * m, dim);
    rhs.view_mut((0, n), (n, n))
        .copy_from(&(Matrix::identity(n, n) / delta + plant.system_matrix() * 0.5));
    rhs.view_mut((n, 0), (m, n))
        .copy_from(&(-&ng / 4.0 + &kg / (2.0 * delta)));
    rhs.view_mut((n, n), (m, n)).copy_from(&(-&ng / 2.0));
    rhs.view_mut((n, 2 * n), (m, m))
        .copy_from(&(Matrix::identity(m, m) / delta));
    rhs.view_mut((n, 2 * n + m), (m, m))
        .copy_from(&(-&spec.k / delta));
    rhs.view_mut((n + m, 0), (m, n)).copy_from(&(&g / 4.0));
    rhs.view_mut((n + m, n), (m, n)).copy_from(&(&g / 2.0));
    rhs.view_mut((n + m, 2 * n + m), (m, m))
        .copy_from(&(Matrix::identity(m, m) * (1.0 / delta - 0.5)));
    let next = solve_or_singular(&t.matrix, &rhs, "consensus step Jacobian")?;
    let mut forcing = Vector::zeros(n + 2 * m);
    forcing.rows_mut(0, n).copy_from(&plant.d);
    let c_next = t
        .matrix
        .clone()
        .lu()
        .solve(&forcing)
        .ok_or_else(|| PlantError::InvariantViolation("consensus step Jacobian is singular".into()))?;
    let mut phi = Matrix::zeros(dim, dim);
    phi.view_mut((0, n), (n, n)).copy_from(&Matrix::identity(n, n));
    phi.view_mut((n, 0), (n + 2 * m, dim)).copy_from(&next);
    let mut c = Vector::zeros(dim);
    c.rows_mut(n, n + 2 * m).copy_from(&c_next);
    Ok((phi, c))
}

/// Row vector `ℓ` with `ℓ s_k = 𝟙ᵀM⁻ᵀ(u_k + K(y_k − ρ_k))`, a quantity the
/// consensus loop preserves.
pub fn consensus_conserved_functional(plant: &LinearPHS, spec: &ConsensusSpec) -> Result<Vector, PlantError> {
    let (n, m) = (plant.state_dim(), plant.input_dim());
    let w = spec
        .m
        .clone()
        .lu()
        .solve(&Vector::from_element(m, 1.0))
        .ok_or(crate::controllers::ControllerError::SingularWeight)?;
    let wk = spec.k.transpose() * &w;
    let half_y = plant.output_matrix().transpose() * &wk * 0.5;
    let mut ell = Vector::zeros(2 * n + 2 * m);
    ell.rows_mut(0, n).copy_from(&half_y);
    ell.rows_mut(n, n).copy_from(&half_y);
    ell.rows_mut(2 * n, m).copy_from(&w);
    ell.rows_mut(2 * n + m, m).copy_from(&(-wk));
    Ok(ell)
}

/// Orthonormal basis of the orthogonal complement of `v`.
pub fn complement_basis(v: &Vector) -> Matrix {
    let dim = v.len();
    let mut basis: Vec<Vector> = vec![v.normalize()];
    for i in 0..dim {
        if basis.len() == dim {
            break;
        }
        let mut e = Vector::zeros(dim);
        e[i] = 1.0;
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&e);
                e -= b * c;
            }
        }
        let norm = e.norm();
        if norm > 1e-8 {
            basis.push(e / norm);
        }
    }
    Matrix::from_columns(&basis[1..])
}

/// Spectral radius of `Φ` restricted to the invariant subspace `ℓ s = 0`.
pub fn restricted_spectral_radius(phi: &Matrix, ell: &Vector) -> Result<f64, PlantError> {
    let q = complement_basis(ell);
    Ok(spectral_radius(&(q.transpose() * phi * &q))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar() -> LinearPHS {
        let one = Matrix::identity(1, 1);
        LinearPHS::new(Matrix::zeros(1, 1), one.clone(), one.clone(), one).unwrap()
    }

    #[test]
    fn scalar_reduction() {
        let p = scalar();
        let f = p.dynamics();
        assert_eq!(f.a[(0, 0)], -1.0);
        assert_eq!(f.b[(0, 0)], 1.0);
    }

    #[test]
    fn invariants_are_checked() {
        let one = Matrix::identity(1, 1);
        let not_skew = LinearPHS::new(one.clone(), one.clone(), one.clone(), one.clone());
        assert!(matches!(not_skew, Err(PlantError::InvariantViolation(_))));
        let neg = LinearPHS::new(Matrix::zeros(1, 1), -one.clone(), one.clone(), one.clone());
        assert!(neg.is_err());
        let rank = LinearPHS::new(Matrix::zeros(1, 1), one.clone(), one.clone(), Matrix::zeros(1, 1));
        assert!(rank.is_err());
    }

    #[test]
    fn as_scalar_blocks() {
        let p = scalar();
        let one = Matrix::identity(1, 1);
        let w = build_as(&p, &one, &one, 0.1).unwrap();
        let expected = Matrix::from_row_slice(2, 2, &[10.5, -1.0, 5.0, 10.5]);
        assert!((w.matrix - expected).amax() < 1e-12);
        assert!(w.invertible);
    }

    #[test]
    fn ac_scalar_blocks() {
        // Scalar plant with a single node; E is the empty 1×0 incidence.
        let p = scalar();
        let spec = ConsensusSpec::new(Matrix::zeros(1, 0), Matrix::identity(1, 1), Matrix::zeros(1, 1)).unwrap();
        let w = build_ac(&p, &spec, 0.1).unwrap();
        let expected = Matrix::from_row_slice(
            3,
            3,
            &[10.5, -1.0, 0.0, 0.0, 10.0, 0.0, -0.25, 0.0, 10.5],
        );
        assert!((w.matrix - expected).amax() < 1e-12);
    }

    #[test]
    fn scalar_stabilizer_map_is_contractive() {
        let p = scalar();
        let one = Matrix::identity(1, 1);
        let map = stabilizer_one_step_map(&p, &one, &one, 0.1).unwrap();
        assert!(spectral_radius(&map).unwrap() < 1.0);
    }

    #[test]
    fn explicit_map_reproduces_midpoint_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = LinearPHS::random(&mut rng, 4, 2)
            .with_disturbance(Vector::from_column_slice(&[0.1, -0.2, 0.3, 0.0]))
            .unwrap();
        let f = p.explicit_map(0.05).unwrap();
        let x = Vector::from_column_slice(&[1.0, 2.0, -1.0, 0.5]);
        let u = Vector::from_column_slice(&[0.3, -0.7]);
        let x1 = f.apply(&x, &u);
        let lhs = (&x1 - &x) / 0.05;
        let rhs = p.system_matrix() * (&x + &x1) * 0.5 + &p.b * &u + &p.d;
        assert!((lhs - rhs).amax() < 1e-11);
    }

    #[test]
    fn shifted_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = LinearPHS::random(&mut rng, 4, 2);
        let delta = 0.1;
        let f = p.explicit_map(delta).unwrap();
        let x = Vector::from_column_slice(&[0.4, -1.0, 0.2, 0.9]);
        let u = Vector::from_column_slice(&[0.5, -0.3]);
        let us = Vector::from_column_slice(&[0.1, 0.2]);
        let g = f.shifted_gradient(&p.h, &x, &u, &us, delta);
        let fd = crate::passivity::fd_gradient(
            |v| f.krasovskii_storage(&p.h, &f.apply(&x, v), &us, delta),
            &u,
        );
        assert!((g - &fd).amax() < 1e-6 * (1.0 + fd.amax()));
    }

    #[test]
    fn equilibrium_solves_linear_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = LinearPHS::random(&mut rng, 5, 2);
        let u = Vector::from_column_slice(&[1.0, -2.0]);
        let x = p.equilibrium(&u).unwrap();
        assert!((p.system_matrix() * &x + &p.b * &u).amax() < 1e-12);
    }

    #[test]
    fn complement_basis_is_orthonormal() {
        let v = Vector::from_column_slice(&[1.0, 2.0, 0.0, -1.0]);
        let q = complement_basis(&v);
        assert_eq!(q.shape(), (4, 3));
        assert!((q.transpose() * &q - Matrix::identity(3, 3)).amax() < 1e-12);
        assert!((q.transpose() * v).amax() < 1e-12);
    }
}
