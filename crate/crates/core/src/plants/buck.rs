//! DC microgrid of buck converters with ZIP loads in port-Hamiltonian form.
//!
//! State `x = (φ, q, φ_t)`: node fluxes, capacitor charges and line fluxes,
//! with `H(x) = (|φ|²_{L⁻¹} + |q|²_{C⁻¹} + |φ_t|²_{L_t⁻¹})/2`. The generated
//! currents `y = L⁻¹φ` are the passive output.

use crate::controllers::{ConsensusLoop, ConsensusSpec, PassiveOutput};
use crate::dynamics::{
    simulate_closed_loop, ClosedLoopRun, ContinuousDynamics, Scheme, SampledModel,
};
use crate::numerics::{diag, Matrix, NewtonSettings, Vector};
use crate::passivity::{KrasovskiiWindow, StorageFunction, SupplyRate};

use super::{check_len, check_positive, line_incidence, ring4_lines, LoadStep, PlantError};

/// Charges below `ADMISSIBLE_VOLTAGE · C` are outside the model domain.
pub const ADMISSIBLE_VOLTAGE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct BuckNetwork {
    /// Filter resistances `R` (Ω).
    pub resistance: Vector,
    /// Filter inductances `L` (H).
    pub inductance: Vector,
    /// Filter capacitances `C` (F).
    pub capacitance: Vector,
    /// Line resistances `R_t` (Ω).
    pub line_resistance: Vector,
    /// Line inductances `L_t` (H).
    pub line_inductance: Vector,
    /// Load conductance `G*_L` (S).
    pub load_conductance: Matrix,
    /// Constant load currents `I*_L` (A).
    pub load_current: Vector,
    /// Constant load powers `P*_L` (W).
    pub load_power: Vector,
    /// Incidence `D` (`ν × μ`).
    pub incidence: Matrix,
    /// Constant disturbance `d` (`2ν + μ`).
    pub disturbance: Vector,
    /// Step of `P*_L`.
    pub power_step: Option<LoadStep>,
}

impl BuckNetwork {
    pub fn validate(&self) -> Result<(), PlantError> {
        let nu = self.nodes();
        let mu = self.lines();
        check_len("inductance", nu, self.inductance.len())?;
        check_len("capacitance", nu, self.capacitance.len())?;
        check_len("line inductance", mu, self.line_inductance.len())?;
        check_len("load conductance rows", nu, self.load_conductance.nrows())?;
        check_len("load conductance columns", nu, self.load_conductance.ncols())?;
        check_len("load current", nu, self.load_current.len())?;
        check_len("load power", nu, self.load_power.len())?;
        check_len("incidence rows", nu, self.incidence.nrows())?;
        check_len("incidence columns", mu, self.incidence.ncols())?;
        check_len("disturbance", 2 * nu + mu, self.disturbance.len())?;
        check_positive("R", &self.resistance)?;
        check_positive("L", &self.inductance)?;
        check_positive("C", &self.capacitance)?;
        check_positive("R_t", &self.line_resistance)?;
        check_positive("L_t", &self.line_inductance)?;
        Ok(())
    }

    /// Four converters on the ring 1–2, 2–3, 3–4, 1–4 with
    /// representative filter, line and ZIP-load values; `P*_L` doubles at
    /// `t = 1 s`.
    pub fn representative() -> Self {
        Self {
            resistance: Vector::from_element(4, 0.2),
            inductance: Vector::from_element(4, 1.8e-3),
            capacitance: Vector::from_element(4, 2.2e-3),
            line_resistance: Vector::from_column_slice(&[0.05, 0.07, 0.1, 0.08]),
            line_inductance: Vector::from_column_slice(&[1.8e-6, 2.2e-6, 3.0e-6, 2.5e-6]),
            load_conductance: diag(&Vector::from_column_slice(&[
                1.0 / 16.0,
                1.0 / 20.0,
                1.0 / 25.0,
                1.0 / 30.0,
            ])),
            load_current: Vector::from_column_slice(&[5.0, 4.0, 6.0, 3.0]),
            load_power: Vector::from_column_slice(&[1000.0, 1500.0, 800.0, 1200.0]),
            incidence: line_incidence(&ring4_lines(), 4).expect("ring is connected"),
            disturbance: Vector::zeros(12),
            power_step: Some(LoadStep {
                time: 1.0,
                factor: 2.0,
            }),
        }
    }

    pub fn nodes(&self) -> usize {
        self.inductance.len()
    }

    pub fn lines(&self) -> usize {
        self.line_inductance.len()
    }

    pub fn state_dim(&self) -> usize {
        2 * self.nodes() + self.lines()
    }

    pub fn load_power_at(&self, t: f64) -> Vector {
        &self.load_power * LoadStep::factor_at(self.power_step.as_ref(), t)
    }

    /// Diagonal of `∇²H = diag{L⁻¹, C⁻¹, L_t⁻¹}`.
    pub fn hessian_diag(&self) -> Vector {
        let parts = [&self.inductance, &self.capacitance, &self.line_inductance];
        Vector::from_iterator(
            self.state_dim(),
            parts.iter().flat_map(|v| v.iter().map(|p| 1.0 / p)),
        )
    }

    pub fn hamiltonian(&self, x: &Vector) -> f64 {
        0.5 * x.component_mul(x).dot(&self.hessian_diag())
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        x.component_mul(&self.hessian_diag())
    }

    /// `J − R` with block `J = [0, −I, 0; I, 0, D; 0, −Dᵀ, 0]` and
    /// `R = diag{R, G*_L, R_t}`.
    pub fn structure_matrix(&self) -> Matrix {
        let (nu, mu) = (self.nodes(), self.lines());
        let eye = Matrix::identity(nu, nu);
        let mut m = Matrix::zeros(2 * nu + mu, 2 * nu + mu);
        m.view_mut((0, 0), (nu, nu)).copy_from(&(-diag(&self.resistance)));
        m.view_mut((0, nu), (nu, nu)).copy_from(&(-&eye));
        m.view_mut((nu, 0), (nu, nu)).copy_from(&eye);
        m.view_mut((nu, nu), (nu, nu)).copy_from(&(-&self.load_conductance));
        m.view_mut((nu, 2 * nu), (nu, mu)).copy_from(&self.incidence);
        m.view_mut((2 * nu, nu), (mu, nu))
            .copy_from(&(-self.incidence.transpose()));
        m.view_mut((2 * nu, 2 * nu), (mu, mu))
            .copy_from(&(-diag(&self.line_resistance)));
        m
    }

    /// Dissipation block `R = diag{R, sym(G*_L), R_t}`.
    pub fn dissipation_matrix(&self) -> Matrix {
        let s = self.structure_matrix();
        -(&s + s.transpose()) * 0.5
    }

    pub fn charge(&self, x: &Vector) -> Vector {
        x.rows(self.nodes(), self.nodes()).into_owned()
    }

    pub fn voltages(&self, x: &Vector) -> Vector {
        self.charge(x).component_div(&self.capacitance)
    }

    pub fn currents(&self, x: &Vector) -> Vector {
        x.rows(0, self.nodes()).component_div(&self.inductance)
    }

    pub fn admissible(&self, x: &Vector) -> bool {
        let nu = self.nodes();
        (0..nu).all(|i| x[nu + i] > ADMISSIBLE_VOLTAGE * self.capacitance[i])
    }

    /// `f̄(q) = −[0; I*_L + diag{C⁻¹q}⁻¹ P*_L; 0]` with load power `p`.
    pub fn load_field(&self, q: &Vector, p: &Vector) -> Vector {
        let nu = self.nodes();
        let mut f = Vector::zeros(self.state_dim());
        for i in 0..nu {
            f[nu + i] = -(self.load_current[i] + self.capacitance[i] * p[i] / q[i]);
        }
        f
    }

    /// `(J − R)∇H(x) + f̄(q) + gu + d`, rejecting nonpositive charges.
    pub fn field(&self, t: f64, x: &Vector, u: &Vector) -> Result<Vector, PlantError> {
        check_len("state", self.state_dim(), x.len())?;
        check_len("input", self.nodes(), u.len())?;
        if let Some(i) = (0..self.nodes()).find(|&i| !(x[self.nodes() + i] > 0.0)) {
            return Err(PlantError::DomainViolation(format!(
                "charge q[{i}] = {} is not positive",
                x[self.nodes() + i]
            )));
        }
        Ok(self.eval_unchecked(t, x, u))
    }

    fn eval_unchecked(&self, t: f64, x: &Vector, u: &Vector) -> Vector {
        let mut f = self.structure_matrix() * self.gradient(x)
            + self.load_field(&self.charge(x), &self.load_power_at(t))
            + &self.disturbance;
        let mut head = f.rows_mut(0, self.nodes());
        head += u;
        f
    }

    pub fn sampled(&self, delta: f64) -> Result<BuckSampled, PlantError> {
        self.validate()?;
        if !(delta >= crate::dynamics::MIN_DELTA) || !delta.is_finite() {
            return Err(crate::dynamics::DynamicsError::InvalidDelta(delta).into());
        }
        Ok(BuckSampled {
            net: self.clone(),
            delta,
        })
    }

    /// `S_K = |Δ_δ x_k|²_{∇²H}/2`.
    pub fn krasovskii_storage(&self) -> StorageFunction {
        StorageFunction::KrasovskiiQuadratic(diag(&self.hessian_diag()))
    }

    /// Output `z_k = Δ_δ y_k`, dissipation
    /// `W_K = |∇²H Δ_δσ_δ x_k|²_R − Σ P*_L (Δ_δσ_δ q_k)² / (q_k q_{k+2})`
    /// evaluated with the load power at `t_k`, and the load-power change
    /// between `t_k` and `t_{k+1}`.
    pub fn supply_rate(&self) -> SupplyRate<'_> {
        let nu = self.nodes();
        let r = self.dissipation_matrix();
        SupplyRate::new(
            move |w: &KrasovskiiWindow| {
                w.delta_sigma_x()
                    .rows(0, nu)
                    .component_div(&self.inductance)
            },
            move |w: &KrasovskiiWindow| {
                let ds = w.delta_sigma_x();
                let hd = ds.component_mul(&self.hessian_diag());
                let p = self.load_power_at(w.k as f64 * w.delta);
                let constant_power: f64 = (0..nu)
                    .map(|i| p[i] * ds[nu + i] * ds[nu + i] / (w.x[0][nu + i] * w.x[2][nu + i]))
                    .sum();
                hd.dot(&(&r * &hd)) - constant_power
            },
        )
        .with_exogenous(move |w: &KrasovskiiWindow| {
            let p0 = self.load_power_at(w.k as f64 * w.delta);
            let p1 = self.load_power_at((w.k + 1) as f64 * w.delta);
            if p0 == p1 {
                return 0.0;
            }
            let (q1, q2) = (self.charge(w.x[1]), self.charge(w.x[2]));
            let sigma = |p: &Vector| (self.load_field(&q1, p) + self.load_field(&q2, p)) * 0.5;
            let change = (sigma(&p1) - sigma(&p0)) / w.delta;
            w.delta_sigma_x()
                .component_mul(&self.hessian_diag())
                .dot(&change)
        })
    }
}

impl ContinuousDynamics for BuckNetwork {
    fn state_dim(&self) -> usize {
        BuckNetwork::state_dim(self)
    }

    fn input_dim(&self) -> usize {
        self.nodes()
    }

    fn eval(&self, t: f64, x: &Vector, u: &Vector) -> Vector {
        self.eval_unchecked(t, x, u)
    }

    fn jac_x(&self, t: f64, x: &Vector, _u: &Vector) -> Matrix {
        let nu = self.nodes();
        let mut j = self.structure_matrix() * diag(&self.hessian_diag());
        let p = self.load_power_at(t);
        for i in 0..nu {
            let q = x[nu + i];
            j[(nu + i, nu + i)] += self.capacitance[i] * p[i] / (q * q);
        }
        j
    }

    fn jac_u(&self, _t: f64, _x: &Vector, _u: &Vector) -> Matrix {
        let nu = self.nodes();
        let mut j = Matrix::zeros(self.state_dim(), nu);
        j.view_mut((0, 0), (nu, nu)).fill_with_identity();
        j
    }

    fn admissible(&self, x: &Vector) -> bool {
        BuckNetwork::admissible(self, x)
    }
}

impl PassiveOutput for BuckNetwork {
    fn passive_output(&self, sigma_x: &Vector) -> Vector {
        self.currents(sigma_x)
    }

    fn passive_output_jacobian(&self, _sigma_x: &Vector) -> Matrix {
        let nu = self.nodes();
        let mut j = Matrix::zeros(nu, self.state_dim());
        j.view_mut((0, 0), (nu, nu))
            .copy_from(&diag(&self.inductance.map(|l| 1.0 / l)));
        j
    }
}

/// Midpoint discretization
/// `Δ_δ x_k = (J − R)∇H(σ_δ x_k) + σ_δ f̄(q_k) + g u_k + d`,
/// where `σ_δ f̄(q_k)` averages `f̄` at both end points with the load power
/// of `t_k`.
#[derive(Debug, Clone)]
pub struct BuckSampled {
    pub net: BuckNetwork,
    delta: f64,
}

impl BuckSampled {
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.delta
    }
}

impl SampledModel for BuckSampled {
    fn state_dim(&self) -> usize {
        self.net.state_dim()
    }

    fn input_dim(&self) -> usize {
        self.net.nodes()
    }

    fn delta(&self) -> f64 {
        self.delta
    }

    fn scheme(&self) -> Scheme {
        Scheme::ImplicitMidpoint
    }

    fn step_residual(&self, k: usize, x: &Vector, x_next: &Vector, u: &Vector) -> Vector {
        let net = &self.net;
        let p = net.load_power_at(self.time(k));
        let sigma = (x + x_next) * 0.5;
        let mut r = (x_next - x) / self.delta
            - net.structure_matrix() * net.gradient(&sigma)
            - (net.load_field(&net.charge(x), &p) + net.load_field(&net.charge(x_next), &p)) * 0.5
            - &net.disturbance;
        let mut head = r.rows_mut(0, net.nodes());
        head -= u;
        r
    }

    fn jacobian_next(&self, k: usize, _x: &Vector, x_next: &Vector, _u: &Vector) -> Matrix {
        buck_pi_jacobian_at(&self.net, x_next, self.delta, &self.net.load_power_at(self.time(k)))
    }

    fn jacobian_input(&self, _k: usize, x: &Vector, _x_next: &Vector, u: &Vector) -> Matrix {
        -self.net.jac_u(0.0, x, u)
    }

    fn admissible(&self, x: &Vector) -> bool {
        self.net.admissible(x)
    }

    fn predictor(&self, k: usize, x: &Vector, u: &Vector) -> Vector {
        x + self.net.eval(self.time(k), x, u) * self.delta
    }
}

/// Jacobian of the midpoint residual with respect to `x_{k+1}` under the
/// nominal load power:
/// `I/δ − (J − R)∇²H/2 − diag{0, C P*_L ⊘ q²_{k+1}, 0}/2`.
pub fn buck_pi_jacobian(net: &BuckNetwork, x_next: &Vector, delta: f64) -> Result<Matrix, PlantError> {
    check_len("state", net.state_dim(), x_next.len())?;
    if !net.admissible(x_next) {
        return Err(PlantError::DomainViolation("charge below the admissible bound".into()));
    }
    Ok(buck_pi_jacobian_at(net, x_next, delta, &net.load_power))
}

fn buck_pi_jacobian_at(net: &BuckNetwork, x_next: &Vector, delta: f64, p: &Vector) -> Matrix {
    let nu = net.nodes();
    let n = net.state_dim();
    let mut pi = Matrix::identity(n, n) / delta - net.structure_matrix() * diag(&net.hessian_diag()) * 0.5;
    for i in 0..nu {
        let q = x_next[nu + i];
        pi[(nu + i, nu + i)] -= 0.5 * net.capacitance[i] * p[i] / (q * q);
    }
    pi
}

/// The same matrix with the constant-power block entering as
/// `+diag{0, C P*_L ⊘ q²_{k+1}, 0}/2`.
pub fn buck_pi_displayed(net: &BuckNetwork, x_next: &Vector, delta: f64) -> Result<Matrix, PlantError> {
    let mut pi = buck_pi_jacobian(net, x_next, delta)?;
    let nu = net.nodes();
    for i in 0..nu {
        let q = x_next[nu + i];
        pi[(nu + i, nu + i)] += net.capacitance[i] * net.load_power[i] / (q * q);
    }
    Ok(pi)
}

/// Input offset `C⁻¹q* + R L⁻¹ φ_k`.
pub fn buck_feedforward(net: &BuckNetwork, q_star: &Vector, phi_k: &Vector) -> Result<Vector, PlantError> {
    check_len("q*", net.nodes(), q_star.len())?;
    check_len("φ_k", net.nodes(), phi_k.len())?;
    Ok(q_star.component_div(&net.capacitance)
        + net.resistance.component_mul(&phi_k.component_div(&net.inductance)))
}

/// Steady state with all node voltages at `v_star` under the nominal load,
/// and the applied input that holds it.
pub fn buck_equilibrium(net: &BuckNetwork, v_star: &Vector) -> Result<(Vector, Vector), PlantError> {
    net.validate()?;
    check_len("V*", net.nodes(), v_star.len())?;
    check_positive("V*", v_star)?;
    let (nu, mu) = (net.nodes(), net.lines());
    let d1 = net.disturbance.rows(0, nu);
    let d2 = net.disturbance.rows(nu, nu);
    let d3 = net.disturbance.rows(2 * nu, mu);
    let i_t = (d3 - net.incidence.transpose() * v_star).component_div(&net.line_resistance);
    let i_gen = &net.load_conductance * v_star
        + &net.load_current
        + net.load_power.component_div(v_star)
        - &net.incidence * &i_t
        - d2;
    let u = v_star + net.resistance.component_mul(&i_gen) - d1;
    let x = Vector::from_iterator(
        net.state_dim(),
        net.inductance
            .component_mul(&i_gen)
            .iter()
            .chain(net.capacitance.component_mul(v_star).iter())
            .chain(net.line_inductance.component_mul(&i_t).iter())
            .copied()
            .collect::<Vec<_>>(),
    );
    Ok((x, u))
}

/// Closed loop of the sampled buck network with the consensus controller
/// and the voltage feedforward `V* + R L⁻¹φ_k`, started at the steady state
/// for `v_star` with designed input zero and `ρ_0 = y_0`.
pub fn simulate_buck_consensus(
    net: &BuckNetwork,
    spec: &ConsensusSpec,
    v_star: &Vector,
    delta: f64,
    steps: usize,
    settings: &NewtonSettings,
) -> Result<ClosedLoopRun, PlantError> {
    let sys = net.sampled(delta)?;
    check_len("consensus nodes", net.nodes(), spec.input_dim())?;
    let (x0, _) = buck_equilibrium(net, v_star)?;
    let q_star = net.capacitance.component_mul(v_star);
    let nu = net.nodes();
    let ff = |_k: usize, x: &Vector| {
        buck_feedforward(net, &q_star, &x.rows(0, nu).into_owned()).expect("dimensions checked")
    };
    let controller = ConsensusLoop { spec, output: net };
    Ok(simulate_closed_loop(
        &sys,
        &controller,
        &x0,
        &Vector::zeros(nu),
        None,
        steps,
        settings,
        Some(&ff),
    )?)
}

/// Continuous-time closed loop `(x, u, ρ)` of the buck network and
/// `u̇ = −MᵀEEᵀM y − K(ẏ − ρ̇)`, `ρ̇ = y − ρ`, with the voltage
/// feedforward added to `u`.
#[derive(Debug, Clone)]
pub struct BuckContinuousLoop {
    pub net: BuckNetwork,
    pub spec: ConsensusSpec,
    pub v_star: Vector,
}

impl ContinuousDynamics for BuckContinuousLoop {
    fn state_dim(&self) -> usize {
        self.net.state_dim() + 2 * self.net.nodes()
    }

    fn input_dim(&self) -> usize {
        0
    }

    fn eval(&self, t: f64, s: &Vector, _u: &Vector) -> Vector {
        let n = self.net.state_dim();
        let nu = self.net.nodes();
        let x = s.rows(0, n).into_owned();
        let u = s.rows(n, nu).into_owned();
        let rho = s.rows(n + nu, nu).into_owned();
        let applied = &u + &self.v_star + self.net.resistance.component_mul(&self.net.currents(&x));
        let dx = self.net.eval(t, &x, &applied);
        let y = self.net.currents(&x);
        let dy = dx.rows(0, nu).component_div(&self.net.inductance);
        let drho = &y - &rho;
        let du = -(self.spec.coupling() * &y) - &self.spec.k * (dy - &drho);
        Vector::from_iterator(
            n + 2 * nu,
            dx.iter().chain(du.iter()).chain(drho.iter()).copied(),
        )
    }

    fn admissible(&self, s: &Vector) -> bool {
        self.net.admissible(&s.rows(0, self.net.state_dim()).into_owned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_difference_jacobian;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state<G: Rng>(net: &BuckNetwork, rng: &mut G) -> Vector {
        let nu = net.nodes();
        let mut x = Vector::zeros(net.state_dim());
        for i in 0..nu {
            x[i] = net.inductance[i] * rng.random_range(0.0..40.0);
            x[nu + i] = net.capacitance[i] * rng.random_range(300.0..420.0);
        }
        for j in 0..net.lines() {
            x[2 * nu + j] = net.line_inductance[j] * rng.random_range(-10.0..10.0);
        }
        x
    }

    #[test]
    fn zero_loads_reduce_to_linear_field() {
        let mut net = BuckNetwork::representative();
        net.load_current = Vector::zeros(4);
        net.load_power = Vector::zeros(4);
        let x = random_state(&net, &mut ChaCha8Rng::seed_from_u64(1));
        let u = Vector::from_element(4, 3.0);
        let f = net.field(0.0, &x, &u).unwrap();
        let mut expected = net.structure_matrix() * net.gradient(&x);
        let mut head = expected.rows_mut(0, 4);
        head += &u;
        assert!((f - expected).amax() < 1e-9);
    }

    #[test]
    fn output_is_generated_current() {
        let net = BuckNetwork::representative();
        let mut x = Vector::zeros(12);
        x[0] = 0.018;
        assert!((net.passive_output(&x)[0] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let net = BuckNetwork::representative();
        let x = random_state(&net, &mut ChaCha8Rng::seed_from_u64(2));
        let fd = crate::passivity::fd_gradient(|z| net.hamiltonian(z), &x);
        let g = net.gradient(&x);
        assert!((fd - &g).amax() < 1e-6 * g.amax());
    }

    #[test]
    fn nonpositive_charge_is_rejected() {
        let net = BuckNetwork::representative();
        let x = Vector::zeros(12);
        assert!(matches!(
            net.field(0.0, &x, &Vector::zeros(4)),
            Err(PlantError::DomainViolation(_))
        ));
        assert!(buck_pi_jacobian(&net, &x, 1e-4).is_err());
    }

    #[test]
    fn pi_is_state_independent_without_power_loads() {
        let mut net = BuckNetwork::representative();
        net.load_power = Vector::zeros(4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = buck_pi_jacobian(&net, &random_state(&net, &mut rng), 1e-4).unwrap();
        let b = buck_pi_jacobian(&net, &random_state(&net, &mut rng), 1e-4).unwrap();
        assert_eq!(a, b);
        let d = buck_pi_displayed(&net, &random_state(&net, &mut rng), 1e-4).unwrap();
        assert_eq!(a, d);
    }

    #[test]
    fn pi_matches_residual_finite_differences() {
        let net = BuckNetwork::representative();
        let sys = net.sampled(1e-4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let x0 = random_state(&net, &mut rng);
            let x1 = random_state(&net, &mut rng);
            let u = Vector::from_element(4, 380.0);
            let fd = finite_difference_jacobian(|z| sys.step_residual(0, &x0, z, &u), &x1);
            let pi = buck_pi_jacobian(&net, &x1, 1e-4).unwrap();
            assert!((&fd - &pi).amax() <= 1e-5 * pi.amax());
        }
    }

    #[test]
    fn feedforward_offsets() {
        let net = BuckNetwork::representative();
        let q = net.capacitance.component_mul(&Vector::from_element(4, 380.0));
        let o = buck_feedforward(&net, &q, &Vector::zeros(4)).unwrap();
        assert!((o - Vector::from_element(4, 380.0)).amax() < 1e-12);
        let mut lossless = net.clone();
        lossless.resistance = Vector::from_element(4, 1e-300);
        let a = buck_feedforward(&lossless, &q, &Vector::zeros(4)).unwrap();
        let b = buck_feedforward(&lossless, &q, &Vector::from_element(4, 1.0)).unwrap();
        assert!((a - b).amax() < 1e-12);
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let net = BuckNetwork::representative();
        let (x, u) = buck_equilibrium(&net, &Vector::from_element(4, 380.0)).unwrap();
        let f = net.field(0.0, &x, &u).unwrap();
        assert!(f.amax() < 1e-10);
        let sys = net.sampled(1e-4).unwrap();
        assert!(sys.step_residual(0, &x, &x, &u).amax() < 1e-9);
    }
}
