//! Sampled discrete-time systems and trajectory generation.
//!
//! A sampled system is the implicit one-step relation
//! `Δ_δ x_k = f(σ_δ x_k, u_k)` with `Δ_δ x_k = (x_{k+1} - x_k)/δ` and
//! `σ_δ x_k` either `x_k` (forward Euler) or `(x_k + x_{k+1})/2`
//! (implicit midpoint).

use std::io::{self, Write};

use thiserror::Error;

use crate::numerics::{
    finite_difference_jacobian, solve_newton_guarded, sup_norm, Matrix, NewtonSettings,
    NumericsError, Vector,
};

pub mod closed_loop;

pub use closed_loop::{simulate_closed_loop, ClosedLoopRun, LoopController, LoopWindow};

/// Smallest admissible sampling period in seconds.
pub const MIN_DELTA: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("sampling period {0} is below the minimum {MIN_DELTA}")]
    InvalidDelta(f64),
    #[error("operation requires the {expected:?} scheme, system uses {actual:?}")]
    WrongScheme { expected: Scheme, actual: Scheme },
    #[error("index {index} out of range for a sequence of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("input sequence is empty")]
    EmptyInputs,
    #[error("{what}: expected dimension {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("step {k} failed: {cause}")]
    StepFailure { k: usize, cause: NumericsError },
    #[error("closed-loop step Jacobian is ill-posed (condition number {condition:e})")]
    IllPosed { condition: f64 },
    #[error("equilibrium search failed: {0}")]
    Equilibrium(NumericsError),
    #[error("invalid horizon or grid: {0}")]
    InvalidGrid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    ForwardEuler,
    ImplicitMidpoint,
}

/// Continuous-time vector field `ẋ = f(t, x, u)`.
///
/// The time argument only carries piecewise-constant parameter schedules
/// (load steps); the dynamics are otherwise autonomous.
pub trait ContinuousDynamics {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn eval(&self, t: f64, x: &Vector, u: &Vector) -> Vector;

    fn jac_x(&self, t: f64, x: &Vector, u: &Vector) -> Matrix {
        finite_difference_jacobian(|z| self.eval(t, z, u), x)
    }

    fn jac_u(&self, t: f64, x: &Vector, u: &Vector) -> Matrix {
        finite_difference_jacobian(|v| self.eval(t, x, v), u)
    }

    /// Row weights that express the step residual in physical units
    /// (for example inductances and capacitances).
    fn residual_scale(&self) -> Option<Vector> {
        None
    }

    fn admissible(&self, _x: &Vector) -> bool {
        true
    }
}

impl<D: ContinuousDynamics + ?Sized> ContinuousDynamics for &D {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn eval(&self, t: f64, x: &Vector, u: &Vector) -> Vector {
        (**self).eval(t, x, u)
    }
    fn jac_x(&self, t: f64, x: &Vector, u: &Vector) -> Matrix {
        (**self).jac_x(t, x, u)
    }
    fn jac_u(&self, t: f64, x: &Vector, u: &Vector) -> Matrix {
        (**self).jac_u(t, x, u)
    }
    fn residual_scale(&self) -> Option<Vector> {
        (**self).residual_scale()
    }
    fn admissible(&self, x: &Vector) -> bool {
        (**self).admissible(x)
    }
}

/// Time-invariant dynamics given by a closure.
pub struct FnDynamics<F> {
    n: usize,
    m: usize,
    f: F,
}

impl<F> FnDynamics<F>
where
    F: Fn(&Vector, &Vector) -> Vector,
{
    pub fn new(state_dim: usize, input_dim: usize, f: F) -> Self {
        Self {
            n: state_dim,
            m: input_dim,
            f,
        }
    }
}

impl<F> ContinuousDynamics for FnDynamics<F>
where
    F: Fn(&Vector, &Vector) -> Vector,
{
    fn state_dim(&self) -> usize {
        self.n
    }
    fn input_dim(&self) -> usize {
        self.m
    }
    fn eval(&self, _t: f64, x: &Vector, u: &Vector) -> Vector {
        (self.f)(x, u)
    }
}

/// Linear time-invariant dynamics `ẋ = Ax + Bu + d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDynamics {
    pub a: Matrix,
    pub b: Matrix,
    pub d: Vector,
}

impl LinearDynamics {
    pub fn new(a: Matrix, b: Matrix) -> Self {
        let d = Vector::zeros(a.nrows());
        Self { a, b, d }
    }
}

impl ContinuousDynamics for LinearDynamics {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    fn eval(&self, _t: f64, x: &Vector, u: &Vector) -> Vector {
        &self.a * x + &self.b * u + &self.d
    }
    fn jac_x(&self, _t: f64, _x: &Vector, _u: &Vector) -> Matrix {
        self.a.clone()
    }
    fn jac_u(&self, _t: f64, _x: &Vector, _u: &Vector) -> Matrix {
        self.b.clone()
    }
}

/// Any model of the form `residual(x_k, x_{k+1}, u_k) = 0` advanced one step
/// at a time.
pub trait SampledModel {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn delta(&self) -> f64;
    fn scheme(&self) -> Scheme;

    /// Residual of the step relation at time index `k`. Zero at a valid step.
    fn step_residual(&self, k: usize, x: &Vector, x_next: &Vector, u: &Vector) -> Vector;

    fn jacobian_next(&self, k: usize, x: &Vector, x_next: &Vector, u: &Vector) -> Matrix {
        finite_difference_jacobian(|z| self.step_residual(k, x, z, u), x_next)
    }

    fn jacobian_input(&self, k: usize, x: &Vector, x_next: &Vector, u: &Vector) -> Matrix {
        finite_difference_jacobian(|v| self.step_residual(k, x, x_next, v), u)
    }

    fn admissible(&self, _x: &Vector) -> bool {
        true
    }

    /// Initial Newton guess for `x_{k+1}`.
    fn predictor(&self, _k: usize, x: &Vector, _u: &Vector) -> Vector {
        x.clone()
    }

    fn step(
        &self,
        k: usize,
        x: &Vector,
        u: &Vector,
        settings: &NewtonSettings,
    ) -> Result<Vector, NumericsError> {
        let mut guess = self.predictor(k, x, u);
        if !self.admissible(&guess) {
            guess = x.clone();
        }
        solve_newton_guarded(
            |z| self.step_residual(k, x, z, u),
            |z| self.jacobian_next(k, x, z, u),
            &guess,
            settings,
            |z| self.admissible(z),
        )
    }
}

/// A continuous vector field discretized by forward Euler or implicit
/// midpoint.
#[derive(Debug, Clone)]
pub struct SampledSystem<D> {
    source: D,
    delta: f64,
    scheme: Scheme,
    scale: Option<Vector>,
}

impl<D: ContinuousDynamics> SampledSystem<D> {
    pub fn new(source: D, delta: f64, scheme: Scheme) -> Result<Self, DynamicsError> {
        if !(delta >= MIN_DELTA) || !delta.is_finite() {
            return Err(DynamicsError::InvalidDelta(delta));
        }
        let scale = source.residual_scale();
        Ok(Self {
            source,
            delta,
            scheme,
            scale,
        })
    }

    pub fn midpoint(source: D, delta: f64) -> Result<Self, DynamicsError> {
        Self::new(source, delta, Scheme::ImplicitMidpoint)
    }

    pub fn euler(source: D, delta: f64) -> Result<Self, DynamicsError> {
        Self::new(source, delta, Scheme::ForwardEuler)
    }

    pub fn source(&self) -> &D {
        &self.source
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.delta
    }

    fn evaluation_point(&self, x: &Vector, x_next: &Vector) -> Vector {
        sigma(self.scheme, x, x_next)
    }

    fn apply_scale(&self, mut v: Vector) -> Vector {
        if let Some(s) = &self.scale {
            v.component_mul_assign(s);
        }
        v
    }

    fn apply_row_scale(&self, mut m: Matrix) -> Matrix {
        if let Some(s) = &self.scale {
            for (i, mut row) in m.row_iter_mut().enumerate() {
                row *= s[i];
            }
        }
        m
    }
}

impl<D: ContinuousDynamics> SampledModel for SampledSystem<D> {
    fn state_dim(&self) -> usize {
        self.source.state_dim()
    }

    fn input_dim(&self) -> usize {
        self.source.input_dim()
    }

    fn delta(&self) -> f64 {
        self.delta
    }

    fn scheme(&self) -> Scheme {
        self.scheme
    }

    fn step_residual(&self, k: usize, x: &Vector, x_next: &Vector, u: &Vector) -> Vector {
        let p = self.evaluation_point(x, x_next);
        let r = (x_next - x) / self.delta - self.source.eval(self.time(k), &p, u);
        self.apply_scale(r)
    }

    fn jacobian_next(&self, k: usize, x: &Vector, x_next: &Vector, u: &Vector) -> Matrix {
        let n = x.len();
        let mut jac = Matrix::identity(n, n) / self.delta;
        if self.scheme == Scheme::ImplicitMidpoint {
            let p = self.evaluation_point(x, x_next);
            jac -= self.source.jac_x(self.time(k), &p, u) * 0.5;
        }
        self.apply_row_scale(jac)
    }

    fn jacobian_input(&self, k: usize, x: &Vector, x_next: &Vector, u: &Vector) -> Matrix {
        let p = self.evaluation_point(x, x_next);
        self.apply_row_scale(-self.source.jac_u(self.time(k), &p, u))
    }

    fn admissible(&self, x: &Vector) -> bool {
        self.source.admissible(x)
    }

    fn predictor(&self, k: usize, x: &Vector, u: &Vector) -> Vector {
        x + self.source.eval(self.time(k), x, u) * self.delta
    }

    fn step(
        &self,
        k: usize,
        x: &Vector,
        u: &Vector,
        settings: &NewtonSettings,
    ) -> Result<Vector, NumericsError> {
        match self.scheme {
            Scheme::ForwardEuler => {
                let next = self.predictor(k, x, u);
                if next.iter().all(|v| v.is_finite()) {
                    Ok(next)
                } else {
                    Err(NumericsError::NonFinite)
                }
            }
            Scheme::ImplicitMidpoint => {
                let mut guess = self.predictor(k, x, u);
                if !self.admissible(&guess) {
                    guess = x.clone();
                }
                solve_newton_guarded(
                    |z| self.step_residual(k, x, z, u),
                    |z| self.jacobian_next(k, x, z, u),
                    &guess,
                    settings,
                    |z| self.admissible(z),
                )
            }
        }
    }
}

fn check_dim(what: &'static str, expected: usize, v: &Vector) -> Result<(), DynamicsError> {
    if v.len() != expected {
        return Err(DynamicsError::DimensionMismatch {
            what,
            expected,
            actual: v.len(),
        });
    }
    Ok(())
}

/// `x_{k+1} = x_k + δ f(x_k, u_k)`.
pub fn euler_step<D: ContinuousDynamics>(
    sys: &SampledSystem<D>,
    k: usize,
    x: &Vector,
    u: &Vector,
) -> Result<Vector, DynamicsError> {
    if sys.scheme() != Scheme::ForwardEuler {
        return Err(DynamicsError::WrongScheme {
            expected: Scheme::ForwardEuler,
            actual: sys.scheme(),
        });
    }
    check_dim("state", sys.state_dim(), x)?;
    check_dim("input", sys.input_dim(), u)?;
    sys.step(k, x, u, &NewtonSettings::default())
        .map_err(|cause| DynamicsError::StepFailure { k, cause })
}

/// Solves `(x_{k+1} - x_k)/δ = f((x_k + x_{k+1})/2, u_k)` by Newton's method.
pub fn midpoint_step<M: SampledModel + ?Sized>(
    sys: &M,
    k: usize,
    x: &Vector,
    u: &Vector,
    settings: &NewtonSettings,
) -> Result<Vector, DynamicsError> {
    if sys.scheme() != Scheme::ImplicitMidpoint {
        return Err(DynamicsError::WrongScheme {
            expected: Scheme::ImplicitMidpoint,
            actual: sys.scheme(),
        });
    }
    check_dim("state", sys.state_dim(), x)?;
    check_dim("input", sys.input_dim(), u)?;
    sys.step(k, x, u, settings)
        .map_err(|cause| DynamicsError::StepFailure { k, cause })
}

pub fn forward_difference(a: &Vector, b: &Vector, delta: f64) -> Vector {
    (b - a) / delta
}

pub fn midpoint(a: &Vector, b: &Vector) -> Vector {
    (a + b) * 0.5
}

/// `σ_δ` applied to the pair `(a_k, a_{k+1})`.
pub fn sigma(scheme: Scheme, a: &Vector, b: &Vector) -> Vector {
    match scheme {
        Scheme::ForwardEuler => a.clone(),
        Scheme::ImplicitMidpoint => midpoint(a, b),
    }
}

fn need(seq: &[Vector], index: usize) -> Result<&Vector, DynamicsError> {
    seq.get(index).ok_or(DynamicsError::IndexOutOfRange {
        index,
        len: seq.len(),
    })
}

/// `Δ_δ a_k` on an arbitrary sampled sequence.
pub fn sequence_delta(seq: &[Vector], k: usize, delta: f64) -> Result<Vector, DynamicsError> {
    let next = need(seq, k + 1)?;
    Ok(forward_difference(&seq[k], next, delta))
}

/// `σ_δ a_k` on an arbitrary sampled sequence.
pub fn sequence_sigma(seq: &[Vector], k: usize, scheme: Scheme) -> Result<Vector, DynamicsError> {
    let next = need(seq, k + 1)?;
    Ok(sigma(scheme, &seq[k], next))
}

/// `Δ_δ σ_δ a_k`, which needs `a_{k+2}`.
pub fn sequence_delta_sigma(
    seq: &[Vector],
    k: usize,
    delta: f64,
    scheme: Scheme,
) -> Result<Vector, DynamicsError> {
    need(seq, k + 2)?;
    let s0 = sigma(scheme, &seq[k], &seq[k + 1]);
    let s1 = sigma(scheme, &seq[k + 1], &seq[k + 2]);
    Ok(forward_difference(&s0, &s1, delta))
}

/// Sampled states, inputs and optional outputs on the grid `t_k = kδ`.
///
/// `inputs` holds either one entry per step or one entry per state; the
/// latter is produced by closed-loop runs where `u_N` is also known.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    delta: f64,
    scheme: Scheme,
    states: Vec<Vector>,
    inputs: Vec<Vector>,
    outputs: Vec<Vector>,
    solver_tolerance: Option<f64>,
}

impl Trajectory {
    pub fn new(
        delta: f64,
        scheme: Scheme,
        states: Vec<Vector>,
        inputs: Vec<Vector>,
    ) -> Result<Self, DynamicsError> {
        if !(delta >= MIN_DELTA) {
            return Err(DynamicsError::InvalidDelta(delta));
        }
        if states.is_empty() {
            return Err(DynamicsError::IndexOutOfRange { index: 0, len: 0 });
        }
        let n = states.len();
        if inputs.len() + 1 != n && inputs.len() != n {
            return Err(DynamicsError::DimensionMismatch {
                what: "input sequence length",
                expected: n - 1,
                actual: inputs.len(),
            });
        }
        Ok(Self {
            delta,
            scheme,
            states,
            inputs,
            outputs: Vec::new(),
            solver_tolerance: None,
        })
    }

    pub fn with_outputs(mut self, outputs: Vec<Vector>) -> Result<Self, DynamicsError> {
        if outputs.len() > self.states.len() {
            return Err(DynamicsError::DimensionMismatch {
                what: "output sequence length",
                expected: self.states.len(),
                actual: outputs.len(),
            });
        }
        self.outputs = outputs;
        Ok(self)
    }

    /// Records the Newton tolerance the trajectory was generated with.
    pub fn with_solver_tolerance(mut self, tolerance: f64) -> Self {
        self.solver_tolerance = Some(tolerance);
        self
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn solver_tolerance(&self) -> Option<f64> {
        self.solver_tolerance
    }

    /// Number of stored states `N + 1`.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[Vector] {
        &self.states
    }

    pub fn inputs(&self) -> &[Vector] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[Vector] {
        &self.outputs
    }

    pub fn state(&self, k: usize) -> Result<&Vector, DynamicsError> {
        need(&self.states, k)
    }

    pub fn input(&self, k: usize) -> Result<&Vector, DynamicsError> {
        need(&self.inputs, k)
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.delta
    }

    pub fn delta_op(&self, k: usize) -> Result<Vector, DynamicsError> {
        sequence_delta(&self.states, k, self.delta)
    }

    pub fn sigma_op(&self, k: usize) -> Result<Vector, DynamicsError> {
        sequence_sigma(&self.states, k, self.scheme)
    }

    pub fn delta_sigma_op(&self, k: usize) -> Result<Vector, DynamicsError> {
        sequence_delta_sigma(&self.states, k, self.delta, self.scheme)
    }

    pub fn input_delta(&self, k: usize) -> Result<Vector, DynamicsError> {
        sequence_delta(&self.inputs, k, self.delta)
    }

    pub fn final_state(&self) -> &Vector {
        self.states.last().expect("trajectory is never empty")
    }

    /// CSV with header `k,t,x_0..,u_0..[,y_0..]`; missing samples are left empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.states[0].len();
        let m = self.inputs.first().map_or(0, |u| u.len());
        let p = self.outputs.first().map_or(0, |y| y.len());
        let mut header = vec!["k".to_string(), "t".to_string()];
        header.extend((0..n).map(|i| format!("x_{i}")));
        header.extend((0..m).map(|i| format!("u_{i}")));
        header.extend((0..p).map(|i| format!("y_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for (k, x) in self.states.iter().enumerate() {
            let mut row = vec![k.to_string(), format_value(self.time(k))];
            row.extend(x.iter().map(|v| format_value(*v)));
            push_optional(&mut row, self.inputs.get(k), m);
            push_optional(&mut row, self.outputs.get(k), p);
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn push_optional(row: &mut Vec<String>, v: Option<&Vector>, width: usize) {
    match v {
        Some(v) => row.extend(v.iter().map(|x| format_value(*x))),
        None => row.extend(std::iter::repeat_n(String::new(), width)),
    }
}

/// Fifteen significant digits in scientific notation.
pub fn format_value(v: f64) -> String {
    format!("{v:.14e}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumPair {
    pub x_star: Vector,
    pub u_star: Vector,
}

/// Iterates the step relation from `x0` under the given inputs.
pub fn simulate_open_loop<M: SampledModel + ?Sized>(
    sys: &M,
    x0: &Vector,
    inputs: &[Vector],
    settings: &NewtonSettings,
) -> Result<Trajectory, DynamicsError> {
    if inputs.is_empty() {
        return Err(DynamicsError::EmptyInputs);
    }
    check_dim("initial state", sys.state_dim(), x0)?;
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(x0.clone());
    for (k, u) in inputs.iter().enumerate() {
        check_dim("input", sys.input_dim(), u)?;
        let next = sys
            .step(k, &states[k], u, settings)
            .map_err(|cause| DynamicsError::StepFailure { k, cause })?;
        states.push(next);
    }
    Ok(
        Trajectory::new(sys.delta(), sys.scheme(), states, inputs.to_vec())?
            .with_solver_tolerance(settings.tolerance),
    )
}

/// Finds `x*` with `f_δ(σ_δ x*, u*) = 0` for the constant sequence `x_k = x*`.
pub fn find_equilibrium<M: SampledModel + ?Sized>(
    sys: &M,
    u_star: &Vector,
    guess: &Vector,
    settings: &NewtonSettings,
) -> Result<EquilibriumPair, DynamicsError> {
    check_dim("input", sys.input_dim(), u_star)?;
    check_dim("state guess", sys.state_dim(), guess)?;
    let g = |x: &Vector| sys.step_residual(0, x, x, u_star);
    let x_star = solve_newton_guarded(
        g,
        |x| finite_difference_jacobian(g, x),
        guess,
        settings,
        |x| sys.admissible(x),
    )
    .map_err(DynamicsError::Equilibrium)?;
    Ok(EquilibriumPair {
        x_star,
        u_star: u_star.clone(),
    })
}

/// Fine-grid ratio used by [`reference_continuous_simulate`] when none is
/// given: ten substeps per sample, reduced so at most `10⁶` fine steps run.
pub fn default_fine_delta(horizon: f64, coarse_delta: f64) -> f64 {
    let budget = (1e6 * coarse_delta / horizon).floor();
    let ratio = budget.clamp(1.0, 10.0);
    coarse_delta / ratio
}

/// Implicit-midpoint integration of `ẋ = f(t, x, u)` on a fine grid,
/// resampled every `coarse_delta` seconds.
///
/// `coarse_delta` must be an integer multiple of `fine_delta`.
pub fn reference_continuous_simulate<D: ContinuousDynamics>(
    cont: &D,
    x0: &Vector,
    u: &Vector,
    horizon: f64,
    fine_delta: f64,
    coarse_delta: f64,
    settings: &NewtonSettings,
) -> Result<Trajectory, DynamicsError> {
    if !(horizon >= coarse_delta) {
        return Err(DynamicsError::InvalidGrid(format!(
            "horizon {horizon} shorter than sampling period {coarse_delta}"
        )));
    }
    let ratio_f = coarse_delta / fine_delta;
    let ratio = ratio_f.round();
    if ratio < 1.0 || (ratio_f - ratio).abs() > 1e-9 * ratio_f {
        return Err(DynamicsError::InvalidGrid(format!(
            "coarse period {coarse_delta} is not a multiple of fine period {fine_delta}"
        )));
    }
    let ratio = ratio as usize;
    let coarse_steps = (horizon / coarse_delta).round() as usize;
    let fine = SampledSystem::midpoint(cont, fine_delta)?;
    let mut x = x0.clone();
    let mut states = Vec::with_capacity(coarse_steps + 1);
    states.push(x.clone());
    for j in 0..coarse_steps * ratio {
        x = fine
            .step(j, &x, u, settings)
            .map_err(|cause| DynamicsError::StepFailure { k: j, cause })?;
        if (j + 1) % ratio == 0 {
            states.push(x.clone());
        }
    }
    let inputs = vec![u.clone(); coarse_steps];
    Ok(
        Trajectory::new(coarse_delta, Scheme::ImplicitMidpoint, states, inputs)?
            .with_solver_tolerance(settings.tolerance),
    )
}

/// Largest step residual along a trajectory, using its stored inputs.
pub fn max_step_residual<M: SampledModel + ?Sized>(sys: &M, traj: &Trajectory) -> f64 {
    let steps = traj.len() - 1;
    (0..steps.min(traj.inputs().len()))
        .map(|k| {
            sup_norm(&sys.step_residual(
                k,
                &traj.states()[k],
                &traj.states()[k + 1],
                &traj.inputs()[k],
            ))
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn decay() -> FnDynamics<impl Fn(&Vector, &Vector) -> Vector> {
        FnDynamics::new(1, 1, |x: &Vector, u: &Vector| -x + u)
    }

    fn still() -> FnDynamics<impl Fn(&Vector, &Vector) -> Vector> {
        FnDynamics::new(2, 1, |x: &Vector, _u: &Vector| Vector::zeros(x.len()))
    }

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn midpoint_scalar_decay() {
        let sys = SampledSystem::midpoint(decay(), 0.1).unwrap();
        let next = midpoint_step(&sys, 0, &v(&[1.0]), &v(&[0.0]), &NewtonSettings::default()).unwrap();
        assert!((next[0] - 0.95 / 1.05).abs() < 1e-12);
        assert!((next[0] - 0.9047619048).abs() < 1e-10);
    }

    #[test]
    fn midpoint_at_equilibrium_stays() {
        let sys = SampledSystem::midpoint(decay(), 0.1).unwrap();
        let next = midpoint_step(&sys, 0, &v(&[1.0]), &v(&[1.0]), &NewtonSettings::default()).unwrap();
        assert_eq!(next[0], 1.0);
    }

    #[test]
    fn zero_field_is_identity() {
        let x = v(&[0.3, -2.0]);
        let mid = SampledSystem::midpoint(still(), 0.2).unwrap();
        assert_eq!(midpoint_step(&mid, 0, &x, &v(&[1.0]), &NewtonSettings::default()).unwrap(), x);
        let eul = SampledSystem::euler(still(), 0.2).unwrap();
        assert_eq!(euler_step(&eul, 0, &x, &v(&[1.0])).unwrap(), x);
    }

    #[test]
    fn euler_scalar_decay() {
        let sys = SampledSystem::euler(decay(), 0.1).unwrap();
        let next = euler_step(&sys, 0, &v(&[1.0]), &v(&[0.0])).unwrap();
        assert_relative_eq!(next[0], 0.9, epsilon = 1e-15);
    }

    #[test]
    fn constructor_rejects_tiny_delta() {
        assert!(matches!(
            SampledSystem::euler(decay(), 0.0),
            Err(DynamicsError::InvalidDelta(_))
        ));
        assert!(SampledSystem::midpoint(decay(), 1e-10).is_err());
        assert!(SampledSystem::midpoint(decay(), f64::NAN).is_err());
    }

    #[test]
    fn scheme_mismatch_is_reported() {
        let sys = SampledSystem::euler(decay(), 0.1).unwrap();
        let err = midpoint_step(&sys, 0, &v(&[1.0]), &v(&[0.0]), &NewtonSettings::default()).unwrap_err();
        assert!(matches!(err, DynamicsError::WrongScheme { .. }));
    }

    #[test]
    fn operators_on_constant_and_ramp() {
        let c = v(&[1.5, -3.0]);
        let t = Trajectory::new(0.5, Scheme::ImplicitMidpoint, vec![c.clone(), c.clone()], vec![v(&[0.0])]).unwrap();
        assert_eq!(t.delta_op(0).unwrap(), Vector::zeros(2));
        assert_eq!(t.sigma_op(0).unwrap(), c);

        let r = Trajectory::new(0.5, Scheme::ImplicitMidpoint, vec![v(&[0.0]), v(&[1.0])], vec![v(&[0.0])]).unwrap();
        assert_eq!(r.delta_op(0).unwrap()[0], 2.0);
        assert_eq!(r.sigma_op(0).unwrap()[0], 0.5);
        assert!(matches!(r.delta_op(1), Err(DynamicsError::IndexOutOfRange { .. })));

        let e = Trajectory::new(0.5, Scheme::ForwardEuler, vec![v(&[0.0]), v(&[1.0])], vec![v(&[0.0])]).unwrap();
        assert_eq!(e.sigma_op(0).unwrap()[0], 0.0);
    }

    #[test]
    fn quadratic_difference_identity() {
        let states = vec![v(&[0.3, -1.2]), v(&[1.1, 0.4])];
        let t = Trajectory::new(0.25, Scheme::ImplicitMidpoint, states.clone(), vec![v(&[0.0])]).unwrap();
        let lhs = (states[1].norm_squared() - states[0].norm_squared()) / 2.0 / 0.25;
        let rhs = t.delta_op(0).unwrap().dot(&t.sigma_op(0).unwrap());
        assert!((lhs - rhs).abs() < 1e-14);
    }

    #[test]
    fn open_loop_scalar_decay_is_geometric() {
        let sys = SampledSystem::midpoint(decay(), 0.1).unwrap();
        let traj = simulate_open_loop(&sys, &v(&[1.0]), &vec![v(&[0.0]); 10], &NewtonSettings::default()).unwrap();
        assert_eq!(traj.len(), 11);
        let expected = (0.95_f64 / 1.05).powi(10);
        assert!((traj.final_state()[0] - expected).abs() < 1e-12);
        assert!(max_step_residual(&sys, &traj) <= 1e-12);
    }

    #[test]
    fn open_loop_zero_field_is_constant() {
        let sys = SampledSystem::midpoint(still(), 0.1).unwrap();
        let x0 = v(&[2.0, 3.0]);
        let traj = simulate_open_loop(&sys, &x0, &vec![v(&[1.0]); 5], &NewtonSettings::default()).unwrap();
        assert!(traj.states().iter().all(|x| *x == x0));
        assert!(matches!(
            simulate_open_loop(&sys, &x0, &[], &NewtonSettings::default()),
            Err(DynamicsError::EmptyInputs)
        ));
    }

    #[test]
    fn equilibrium_examples() {
        let sys = SampledSystem::midpoint(decay(), 0.1).unwrap();
        let eq = find_equilibrium(&sys, &v(&[1.0]), &v(&[0.0]), &NewtonSettings::default()).unwrap();
        assert!((eq.x_star[0] - 1.0).abs() < 1e-12);
        let traj = simulate_open_loop(&sys, &eq.x_star, &vec![eq.u_star.clone(); 20], &NewtonSettings::default()).unwrap();
        assert!(traj.states().iter().all(|x| (x[0] - eq.x_star[0]).abs() < 1e-12));

        let z = SampledSystem::midpoint(still(), 0.1).unwrap();
        let guess = v(&[4.0, -1.0]);
        let eq = find_equilibrium(&z, &v(&[0.0]), &guess, &NewtonSettings::default()).unwrap();
        assert_eq!(eq.x_star, guess);
    }

    #[test]
    fn reference_simulation_matches_exponential() {
        let x = reference_continuous_simulate(
            &decay(),
            &v(&[1.0]),
            &v(&[0.0]),
            1.0,
            1e-4,
            0.1,
            &NewtonSettings::default(),
        )
        .unwrap();
        assert_eq!(x.len(), 11);
        assert!((x.final_state()[0] - (-1.0_f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn reference_simulation_is_second_order() {
        let endpoint = |fine: f64| {
            reference_continuous_simulate(&decay(), &v(&[1.0]), &v(&[0.0]), 1.0, fine, 0.1, &NewtonSettings::default())
                .unwrap()
                .final_state()[0]
        };
        let exact = (-1.0_f64).exp();
        let e1 = (endpoint(0.02) - exact).abs();
        let e2 = (endpoint(0.01) - exact).abs();
        let order = (e1 / e2).log2();
        assert!(order >= 1.9, "observed order {order}");
    }

    #[test]
    fn reference_rejects_bad_grids() {
        let s = NewtonSettings::default();
        assert!(reference_continuous_simulate(&decay(), &v(&[1.0]), &v(&[0.0]), 0.05, 0.01, 0.1, &s).is_err());
        assert!(reference_continuous_simulate(&decay(), &v(&[1.0]), &v(&[0.0]), 1.0, 0.03, 0.1, &s).is_err());
    }

    #[test]
    fn default_fine_delta_respects_budget() {
        assert_relative_eq!(default_fine_delta(3.0, 1e-4), 1e-5);
        assert_relative_eq!(default_fine_delta(1000.0, 1e-4), 1e-4);
    }

    #[test]
    fn csv_layout() {
        let t = Trajectory::new(0.5, Scheme::ImplicitMidpoint, vec![v(&[1.0]), v(&[2.0])], vec![v(&[3.0])]).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,t,x_0,u_0");
        assert_eq!(lines[1], "0,0.00000000000000e0,1.00000000000000e0,3.00000000000000e0");
        assert_eq!(lines[2], "1,5.00000000000000e-1,2.00000000000000e0,");
    }
}
