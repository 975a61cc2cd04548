//! DC microgrid of boost converters with constant-impedance and
//! constant-current loads.
//!
//! State `x = (I_s, V, I)` with generated currents `I_s`, node voltages `V`
//! and line currents `I`; input `u` is the duty ratio of each converter.

use crate::controllers::{BoostShiftedController, KrasovskiiOutput, StabilizerSpec};
use crate::dynamics::{ContinuousDynamics, SampledSystem, Trajectory};
use crate::numerics::{block_diag, diag, Matrix, NewtonSettings, Vector};
use crate::passivity::{KrasovskiiWindow, StorageFunction, SupplyRate};

use super::{check_len, check_positive, line_incidence, ring4_lines, LoadStep, PlantError};

#[derive(Debug, Clone, PartialEq)]
pub struct BoostNetwork {
    /// Filter inductances `L_s` (H).
    pub source_inductance: Vector,
    /// Filter capacitances `C` (F).
    pub capacitance: Vector,
    /// Load conductances `G*_l` (S).
    pub load_conductance: Vector,
    /// Constant load currents `I*_l` (A).
    pub load_current: Vector,
    /// Source voltages `V*_s` (V).
    pub source_voltage: Vector,
    /// Line inductances `L` (H).
    pub line_inductance: Vector,
    /// Line resistances `R` (Ω).
    pub line_resistance: Vector,
    /// Incidence `D` (`ν × μ`).
    pub incidence: Matrix,
    /// Step of `I*_l`.
    pub load_step: Option<LoadStep>,
}

impl BoostNetwork {
    pub fn validate(&self) -> Result<(), PlantError> {
        let nu = self.nodes();
        let mu = self.lines();
        check_len("capacitance", nu, self.capacitance.len())?;
        check_len("load conductance", nu, self.load_conductance.len())?;
        check_len("load current", nu, self.load_current.len())?;
        check_len("source voltage", nu, self.source_voltage.len())?;
        check_len("line resistance", mu, self.line_resistance.len())?;
        check_len("incidence rows", nu, self.incidence.nrows())?;
        check_len("incidence columns", mu, self.incidence.ncols())?;
        check_positive("L_s", &self.source_inductance)?;
        check_positive("C", &self.capacitance)?;
        if self.load_conductance.iter().any(|g| !(*g >= 0.0)) {
            return Err(PlantError::InvariantViolation("G*_l must be nonnegative".into()));
        }
        check_positive("V*_s", &self.source_voltage)?;
        check_positive("L", &self.line_inductance)?;
        check_positive("R", &self.line_resistance)?;
        Ok(())
    }

    /// Four converters on the ring 1–2, 2–3, 3–4, 1–4 with filter values
    /// `L_s = 1.12 mH`, `C = 6.8 mF`, `V*_s = 280 V`, representative line
    /// and load data and a 50 % load-current step at `t = 1 s`.
    pub fn representative() -> Self {
        Self {
            source_inductance: Vector::from_element(4, 1.12e-3),
            capacitance: Vector::from_element(4, 6.8e-3),
            load_conductance: Vector::from_column_slice(&[0.05, 0.04, 0.06, 0.03]),
            load_current: Vector::from_column_slice(&[5.0, 4.0, 6.0, 3.0]),
            source_voltage: Vector::from_element(4, 280.0),
            line_inductance: Vector::from_column_slice(&[1.8e-6, 2.2e-6, 3.0e-6, 2.5e-6]),
            line_resistance: Vector::from_column_slice(&[0.05, 0.07, 0.1, 0.08]),
            incidence: line_incidence(&ring4_lines(), 4).expect("ring is connected"),
            load_step: Some(LoadStep {
                time: 1.0,
                factor: 1.5,
            }),
        }
    }

    pub fn nodes(&self) -> usize {
        self.source_inductance.len()
    }

    pub fn lines(&self) -> usize {
        self.line_inductance.len()
    }

    pub fn state_dim(&self) -> usize {
        2 * self.nodes() + self.lines()
    }

    /// Diagonal of `diag{L_s, C, L}`.
    pub fn mass(&self) -> Vector {
        let parts = [&self.source_inductance, &self.capacitance, &self.line_inductance];
        Vector::from_iterator(self.state_dim(), parts.iter().flat_map(|v| v.iter().copied()))
    }

    pub fn load_current_at(&self, t: f64) -> Vector {
        &self.load_current * LoadStep::factor_at(self.load_step.as_ref(), t)
    }

    pub fn split(&self, x: &Vector) -> (Vector, Vector, Vector) {
        let nu = self.nodes();
        (
            x.rows(0, nu).into_owned(),
            x.rows(nu, nu).into_owned(),
            x.rows(2 * nu, self.lines()).into_owned(),
        )
    }

    pub fn join(&self, i_s: &Vector, v: &Vector, i: &Vector) -> Vector {
        Vector::from_iterator(
            self.state_dim(),
            i_s.iter().chain(v.iter()).chain(i.iter()).copied(),
        )
    }

    /// Right-hand side multiplied by `diag{L_s, C, L}`.
    fn scaled_field(&self, t: f64, x: &Vector, u: &Vector) -> Vector {
        let (i_s, v, i) = self.split(x);
        let duty = u.map(|ui| 1.0 - ui);
        let e1 = -duty.component_mul(&v) + &self.source_voltage;
        let e2 = duty.component_mul(&i_s) - self.load_conductance.component_mul(&v)
            - self.load_current_at(t)
            + &self.incidence * &i;
        let e3 = -(self.incidence.transpose() * &v) - self.line_resistance.component_mul(&i);
        self.join(&e1, &e2, &e3)
    }

    /// Jacobian of the scaled right-hand side with respect to the state.
    fn scaled_jac_x(&self, u: &Vector) -> Matrix {
        let (nu, mu) = (self.nodes(), self.lines());
        let duty = diag(&u.map(|ui| 1.0 - ui));
        let mut j = Matrix::zeros(2 * nu + mu, 2 * nu + mu);
        j.view_mut((0, nu), (nu, nu)).copy_from(&(-&duty));
        j.view_mut((nu, 0), (nu, nu)).copy_from(&duty);
        j.view_mut((nu, nu), (nu, nu))
            .copy_from(&(-diag(&self.load_conductance)));
        j.view_mut((nu, 2 * nu), (nu, mu)).copy_from(&self.incidence);
        j.view_mut((2 * nu, nu), (mu, nu))
            .copy_from(&(-self.incidence.transpose()));
        j.view_mut((2 * nu, 2 * nu), (mu, mu))
            .copy_from(&(-diag(&self.line_resistance)));
        j
    }

    fn scaled_jac_u(&self, x: &Vector) -> Matrix {
        let (i_s, v, _) = self.split(x);
        let nu = self.nodes();
        let mut j = Matrix::zeros(self.state_dim(), nu);
        j.view_mut((0, 0), (nu, nu)).copy_from(&diag(&v));
        j.view_mut((nu, 0), (nu, nu)).copy_from(&(-diag(&i_s)));
        j
    }

    pub fn sampled(&self, delta: f64) -> Result<SampledSystem<BoostNetwork>, PlantError> {
        self.validate()?;
        Ok(SampledSystem::midpoint(self.clone(), delta)?)
    }

    /// `S_K = (|Δ_δ I_s|²_{L_s} + |Δ_δ V|²_C + |Δ_δ I|²_L)/2`.
    pub fn krasovskii_storage(&self) -> StorageFunction {
        StorageFunction::KrasovskiiQuadratic(diag(&self.mass()))
    }

    /// Output `z_k`, dissipation `|Δ_δσ_δ V_k|²_{G*_l} + |Δ_δσ_δ I_k|²_R` and
    /// the load-current change `−(Δ_δσ_δ V_k)ᵀ Δ_δ I*_l(t_k)`.
    pub fn supply_rate(&self) -> SupplyRate<'_> {
        let nu = self.nodes();
        let mu = self.lines();
        SupplyRate::new(
            move |w: &KrasovskiiWindow| self.krasovskii_output(w.delta, w.x[0], w.x[1], w.x[2]),
            move |w: &KrasovskiiWindow| {
                let ds = w.delta_sigma_x();
                let dv = ds.rows(nu, nu);
                let di = ds.rows(2 * nu, mu);
                dv.component_mul(&dv).dot(&self.load_conductance)
                    + di.component_mul(&di).dot(&self.line_resistance)
            },
        )
        .with_exogenous(move |w: &KrasovskiiWindow| {
            let t0 = w.k as f64 * w.delta;
            let t1 = (w.k + 1) as f64 * w.delta;
            let change = (self.load_current_at(t1) - self.load_current_at(t0)) / w.delta;
            -w.delta_sigma_x().rows(nu, nu).dot(&change)
        })
    }
}

impl ContinuousDynamics for BoostNetwork {
    fn state_dim(&self) -> usize {
        BoostNetwork::state_dim(self)
    }

    fn input_dim(&self) -> usize {
        self.nodes()
    }

    fn eval(&self, t: f64, x: &Vector, u: &Vector) -> Vector {
        self.scaled_field(t, x, u).component_div(&self.mass())
    }

    fn jac_x(&self, _t: f64, _x: &Vector, u: &Vector) -> Matrix {
        diag(&self.mass().map(|m| 1.0 / m)) * self.scaled_jac_x(u)
    }

    fn jac_u(&self, _t: f64, x: &Vector, _u: &Vector) -> Matrix {
        diag(&self.mass().map(|m| 1.0 / m)) * self.scaled_jac_u(x)
    }

    fn residual_scale(&self) -> Option<Vector> {
        Some(self.mass())
    }
}

impl KrasovskiiOutput for BoostNetwork {
    /// `z_k = Δ_δσ_δ I_{s,k} ∘ σ_δ V_k − σ_δ I_{s,k} ∘ Δ_δσ_δ V_k`.
    fn krasovskii_output(&self, delta: f64, x0: &Vector, x1: &Vector, x2: &Vector) -> Vector {
        let nu = self.nodes();
        let ds = (x2 - x0) / (2.0 * delta);
        let s = (x0 + x1) * 0.5;
        ds.rows(0, nu).component_mul(&s.rows(nu, nu))
            - s.rows(0, nu).component_mul(&ds.rows(nu, nu))
    }
}

/// Midpoint step Jacobian scaled by `diag{L_s, C, L}`:
/// `[L_s/δ, (I − diag u_k)/2, 0; −(I − diag u_k)/2, C/δ + G*_l/2, −D/2; 0, Dᵀ/2, L/δ + R/2]`.
pub fn boost_pi_matrix(net: &BoostNetwork, u_k: &Vector, delta: f64) -> Result<Matrix, PlantError> {
    check_len("duty ratio", net.nodes(), u_k.len())?;
    Ok(diag(&net.mass()) / delta - net.scaled_jac_x(u_k) * 0.5)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostEquilibrium {
    pub i_s: Vector,
    pub v: Vector,
    pub i: Vector,
    pub u: Vector,
}

impl BoostEquilibrium {
    pub fn state(&self, net: &BoostNetwork) -> Vector {
        net.join(&self.i_s, &self.v, &self.i)
    }
}

/// Equilibrium for voltage reference `v_star` under the nominal load.
pub fn boost_equilibrium(net: &BoostNetwork, v_star: &Vector) -> Result<BoostEquilibrium, PlantError> {
    boost_equilibrium_with_load(net, v_star, &net.load_current)
}

/// Equilibrium with load current `i_load`:
/// `u* = 𝟙 − V*_s ⊘ V*`, `I* = −R⁻¹DᵀV*`,
/// `I*_s = (I − diag u*)⁻¹(G*_l V* + I*_l − D I*)`.
pub fn boost_equilibrium_with_load(
    net: &BoostNetwork,
    v_star: &Vector,
    i_load: &Vector,
) -> Result<BoostEquilibrium, PlantError> {
    net.validate()?;
    check_len("V*", net.nodes(), v_star.len())?;
    check_len("I*_l", net.nodes(), i_load.len())?;
    for (node, (&v, &vs)) in v_star.iter().zip(net.source_voltage.iter()).enumerate() {
        if !(v >= vs) {
            return Err(PlantError::InfeasibleReference {
                node,
                v_star: v,
                v_source: vs,
            });
        }
    }
    let u = Vector::from_iterator(
        net.nodes(),
        v_star.iter().zip(net.source_voltage.iter()).map(|(v, vs)| 1.0 - vs / v),
    );
    let i = -(net.incidence.transpose() * v_star).component_div(&net.line_resistance);
    let injected = net.load_conductance.component_mul(v_star) + i_load - &net.incidence * &i;
    let i_s = injected.component_div(&u.map(|ui| 1.0 - ui));
    Ok(BoostEquilibrium {
        i_s,
        v: v_star.clone(),
        i,
        u,
    })
}

#[derive(Debug, Clone)]
pub struct BoostRun {
    /// States with applied duty ratios.
    pub trajectory: Trajectory,
    /// Number of steps at which the duty ratio hit `[0, 1 − 1e-6]`.
    pub clamp_events: usize,
}

/// Closed loop of the boost network and the time-shifted stabilizer,
/// started from `x0` with the duty ratio `spec.u_star`.
pub fn simulate_boost_shifted(
    net: &BoostNetwork,
    spec: &StabilizerSpec,
    x0: &Vector,
    delta: f64,
    steps: usize,
    settings: &NewtonSettings,
) -> Result<BoostRun, PlantError> {
    use crate::dynamics::{DynamicsError, SampledModel};

    let sys = net.sampled(delta)?;
    check_len("initial state", net.state_dim(), x0.len())?;
    check_len("gains", net.nodes(), spec.input_dim())?;
    let nu = net.nodes();
    let mut ctrl = BoostShiftedController::new(spec.clone(), delta, spec.u_star.clone())?;
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps);
    states.push(x0.clone());
    for k in 0..steps {
        let x = &states[k];
        let u = ctrl.next_input(&x.rows(0, nu).into_owned(), &x.rows(nu, nu).into_owned())?;
        let next = sys
            .step(k, x, &u, settings)
            .map_err(|cause| DynamicsError::StepFailure { k, cause })?;
        inputs.push(u);
        states.push(next);
    }
    let trajectory = Trajectory::new(delta, sys.scheme(), states, inputs)
        .map_err(PlantError::from)?
        .with_solver_tolerance(settings.tolerance);
    Ok(BoostRun {
        trajectory,
        clamp_events: ctrl.clamp_events(),
    })
}

/// Continuous-time closed loop `(x, u)` with
/// `K1 u̇ = K2(u* − u) − (İ_s ∘ V − I_s ∘ V̇)`.
#[derive(Debug, Clone)]
pub struct BoostContinuousLoop {
    pub net: BoostNetwork,
    pub spec: StabilizerSpec,
}

impl ContinuousDynamics for BoostContinuousLoop {
    fn state_dim(&self) -> usize {
        self.net.state_dim() + self.net.nodes()
    }

    fn input_dim(&self) -> usize {
        0
    }

    fn eval(&self, t: f64, xu: &Vector, _u: &Vector) -> Vector {
        let n = self.net.state_dim();
        let nu = self.net.nodes();
        let x = xu.rows(0, n).into_owned();
        let u = xu.rows(n, nu).into_owned();
        let dx = self.net.eval(t, &x, &u);
        let z = dx.rows(0, nu).component_mul(&x.rows(nu, nu))
            - x.rows(0, nu).component_mul(&dx.rows(nu, nu));
        let rhs = &self.spec.k2 * (&self.spec.u_star - &u) - z;
        let du = self
            .spec
            .k1
            .clone()
            .lu()
            .solve(&rhs)
            .expect("K1 is positive definite");
        Vector::from_iterator(n + nu, dx.iter().chain(du.iter()).copied())
    }

    fn residual_scale(&self) -> Option<Vector> {
        let mass = self.net.mass();
        let nu = self.net.nodes();
        Some(Vector::from_iterator(
            mass.len() + nu,
            mass.iter().copied().chain(std::iter::repeat_n(1.0, nu)),
        ))
    }
}

/// Block-diagonal `diag{L_s, C, L}` as a dense matrix.
pub fn boost_mass_matrix(net: &BoostNetwork) -> Matrix {
    block_diag(&[
        &diag(&net.source_inductance),
        &diag(&net.capacitance),
        &diag(&net.line_inductance),
    ])
}
