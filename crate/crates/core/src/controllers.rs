//! Sampled Krasovskii-passivity-based controllers.
//!
//! - the implicit-midpoint stabilizer `K1 Δ_δ u_k = K2(u* − σ_δ u_k) − z_k`,
//!   both as a residual for joint closed-loop solves and in the explicit
//!   two-step-delayed form used for boost converters;
//! - the weighted output-consensus controller
//!   `Δ_δ u_k = −MᵀEEᵀM σ_δ y_k − K(Δ_δ y_k − Δ_δ ρ_k)`,
//!   `Δ_δ ρ_k = σ_δ y_k − σ_δ ρ_k`.

use std::collections::VecDeque;

use thiserror::Error;

use crate::dynamics::{LoopController, LoopWindow};
use crate::numerics::{
    finite_difference_jacobian, is_positive_definite, is_positive_semidefinite, is_well_conditioned,
    Matrix, NumericsError, Vector,
};
use crate::passivity::{AuditEntry, AuditMode, DissipationReport, StorageFunction};

/// Upper end of the duty-ratio range `[0, 1 − 1e-6]`.
pub const DUTY_RATIO_MAX: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("{what}: expected dimension {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{0} must be positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("{0} must be positive semidefinite")]
    NotPositiveSemidefinite(&'static str),
    #[error("weight matrix M is singular")]
    SingularWeight,
    #[error("invalid incidence matrix: {0}")]
    InvalidIncidence(String),
    #[error("communication graph is disconnected")]
    DisconnectedGraph,
    #[error("controller history incomplete: need 3 samples, have {0}")]
    HistoryIncomplete(usize),
    #[error("sequences too short for the audit: need {needed}, have {available}")]
    WindowTooShort { needed: usize, available: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<(), ControllerError> {
    if expected != actual {
        return Err(ControllerError::DimensionMismatch {
            what,
            expected,
            actual,
        });
    }
    Ok(())
}

fn check_square(what: &'static str, m: &Matrix, n: usize) -> Result<(), ControllerError> {
    check_len(what, n, m.nrows())?;
    check_len(what, n, m.ncols())
}

/// Krasovskii passive output `z_k` of a sampled plant, a function of
/// `x_k, x_{k+1}, x_{k+2}`.
pub trait KrasovskiiOutput {
    fn krasovskii_output(&self, delta: f64, x0: &Vector, x1: &Vector, x2: &Vector) -> Vector;

    /// Jacobian of `z_k` with respect to `x_{k+2}`.
    fn krasovskii_output_jacobian(&self, delta: f64, x0: &Vector, x1: &Vector, x2: &Vector) -> Matrix {
        finite_difference_jacobian(|z| self.krasovskii_output(delta, x0, x1, z), x2)
    }
}

/// Output `y_k = h(σ_δ x_k)` of a strictly Krasovskii passive plant.
pub trait PassiveOutput {
    fn passive_output(&self, sigma_x: &Vector) -> Vector;

    fn passive_output_jacobian(&self, sigma_x: &Vector) -> Matrix {
        finite_difference_jacobian(|z| self.passive_output(z), sigma_x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilizerSpec {
    pub k1: Matrix,
    pub k2: Matrix,
    pub u_star: Vector,
}

impl StabilizerSpec {
    pub fn new(k1: Matrix, k2: Matrix, u_star: Vector) -> Result<Self, ControllerError> {
        let m = u_star.len();
        check_square("K1", &k1, m)?;
        check_square("K2", &k2, m)?;
        if !is_positive_definite(&k1)? {
            return Err(ControllerError::NotPositiveDefinite("K1"));
        }
        if !is_positive_definite(&k2)? {
            return Err(ControllerError::NotPositiveDefinite("K2"));
        }
        Ok(Self { k1, k2, u_star })
    }

    /// Diagonal gains `K1 = k1·I`, `K2 = k2·I`.
    pub fn uniform(k1: f64, k2: f64, u_star: Vector) -> Result<Self, ControllerError> {
        let m = u_star.len();
        Self::new(
            Matrix::identity(m, m) * k1,
            Matrix::identity(m, m) * k2,
            u_star,
        )
    }

    pub fn input_dim(&self) -> usize {
        self.u_star.len()
    }

    /// Storage `S_u(u) = |u − u*|²_{K2} / 2`.
    pub fn storage(&self) -> StorageFunction {
        StorageFunction::ShiftedQuadratic {
            u_star: self.u_star.clone(),
            k2: self.k2.clone(),
        }
    }
}

/// `K1(u_{k+1} − u_k)/δ − K2(u* − (u_k + u_{k+1})/2) + z_k`.
pub fn stabilizer_residual(
    spec: &StabilizerSpec,
    delta: f64,
    u_k: &Vector,
    u_k1: &Vector,
    z_k: &Vector,
) -> Result<Vector, ControllerError> {
    let m = spec.input_dim();
    check_len("u_k", m, u_k.len())?;
    check_len("u_{k+1}", m, u_k1.len())?;
    check_len("z_k", m, z_k.len())?;
    Ok(&spec.k1 * (u_k1 - u_k) / delta - &spec.k2 * (&spec.u_star - (u_k + u_k1) * 0.5) + z_k)
}

/// Solves the stabilizer residual for `u_{k+1}` given `z_k`.
pub fn stabilizer_step(
    spec: &StabilizerSpec,
    delta: f64,
    u_k: &Vector,
    z_k: &Vector,
) -> Result<Vector, ControllerError> {
    let lhs = &spec.k1 / delta + &spec.k2 * 0.5;
    let rhs = (&spec.k1 / delta - &spec.k2 * 0.5) * u_k + &spec.k2 * &spec.u_star - z_k;
    lhs.lu()
        .solve(&rhs)
        .ok_or(ControllerError::Numerics(NumericsError::SingularJacobian { iteration: 0 }))
}

/// Stabilizer coupled to a plant output for [`crate::dynamics::simulate_closed_loop`].
pub struct StabilizerLoop<'a, O: ?Sized> {
    pub spec: &'a StabilizerSpec,
    pub output: &'a O,
}

impl<O: KrasovskiiOutput + ?Sized> LoopController for StabilizerLoop<'_, O> {
    fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    fn residual(&self, w: &LoopWindow) -> Vector {
        let z = self.output.krasovskii_output(w.delta, w.x[0], w.x[1], w.x[2]);
        stabilizer_residual(self.spec, w.delta, w.u[0], w.u[1], &z).expect("dimensions checked by the loop")
    }

    fn jacobian(&self, w: &LoopWindow) -> Matrix {
        let n = w.x[2].len();
        let m = self.spec.input_dim();
        let mut jac = Matrix::zeros(m, n + m);
        jac.view_mut((0, 0), (m, n)).copy_from(
            &self
                .output
                .krasovskii_output_jacobian(w.delta, w.x[0], w.x[1], w.x[2]),
        );
        jac.view_mut((0, n), (m, m))
            .copy_from(&(&self.spec.k1 / w.delta + &self.spec.k2 * 0.5));
        jac
    }
}

/// Audits `Δ_δ S_u + |Δ_δ u_k|²_{K1} + (Δ_δ u_k)ᵀ z_k = 0` with
/// `S_u = |u − u*|²_{K2}/2` on controller sequences.
pub fn check_assumption_stab(
    spec: &StabilizerSpec,
    delta: f64,
    u_seq: &[Vector],
    z_seq: &[Vector],
    tolerance: f64,
) -> Result<DissipationReport, ControllerError> {
    let steps = u_seq.len().saturating_sub(1).min(z_seq.len());
    if steps == 0 {
        return Err(ControllerError::WindowTooShort {
            needed: 2,
            available: u_seq.len(),
        });
    }
    let storage = spec.storage();
    let empty = Vector::zeros(0);
    let entries = (0..steps)
        .map(|k| {
            let s0 = storage.evaluate(&u_seq[k], &empty, &empty);
            let s1 = storage.evaluate(&u_seq[k + 1], &empty, &empty);
            let ds = (s1 - s0) / delta;
            let du = (&u_seq[k + 1] - &u_seq[k]) / delta;
            let damping = du.dot(&(&spec.k1 * &du));
            let supply = du.dot(&z_seq[k]);
            AuditEntry::new(k, ds + damping + supply, &[ds, s0 / delta, s1 / delta, damping, supply])
        })
        .collect();
    Ok(DissipationReport::new(AuditMode::Equality, tolerance, entries, Vec::new()))
}

/// Samples `k−2, k−1, k` of generated current and voltage, plus the
/// internal controller value `u_{k−2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoostControllerHistory {
    pub u_prev2: Vector,
    pub i_s: Vec<Vector>,
    pub v: Vec<Vector>,
}

/// `z_{k−2}` from generated currents and voltages at `k−2, k−1, k`.
pub fn boost_delayed_output(hist: &BoostControllerHistory, delta: f64) -> Result<Vector, ControllerError> {
    if hist.i_s.len() != 3 || hist.v.len() != 3 {
        return Err(ControllerError::HistoryIncomplete(hist.i_s.len().min(hist.v.len())));
    }
    let (i, v) = (&hist.i_s, &hist.v);
    let a = (&i[2] - &i[0]).component_mul(&(&v[1] + &v[0]));
    let b = (&i[1] + &i[0]).component_mul(&(&v[2] - &v[0]));
    Ok((a - b) / (4.0 * delta))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostUpdate {
    pub u: Vector,
    pub clamped: bool,
}

/// `(2K1 + δK2)⁻¹((2K1 − δK2)u_{k−2} − 2δ z_{k−2} + 2δ K2 u*)`, clamped to
/// the duty-ratio range.
pub fn boost_controller_update(
    hist: &BoostControllerHistory,
    spec: &StabilizerSpec,
    delta: f64,
) -> Result<BoostUpdate, ControllerError> {
    check_len("u_{k-2}", spec.input_dim(), hist.u_prev2.len())?;
    let z = boost_delayed_output(hist, delta)?;
    let lhs = &spec.k1 * 2.0 + &spec.k2 * delta;
    let rhs = (&spec.k1 * 2.0 - &spec.k2 * delta) * &hist.u_prev2 - z * (2.0 * delta)
        + &spec.k2 * &spec.u_star * (2.0 * delta);
    let raw = lhs
        .lu()
        .solve(&rhs)
        .ok_or(ControllerError::Numerics(NumericsError::SingularJacobian { iteration: 0 }))?;
    let u = raw.map(|v| v.clamp(0.0, DUTY_RATIO_MAX));
    let clamped = u != raw;
    Ok(BoostUpdate { u, clamped })
}

/// Time-shifted boost controller with internal sequence `w`.
///
/// Inputs applied at `k = 0, 1` equal the initial value; from `k = 2` on
/// the applied input is `w_{k−1}`, computed from `w_{k−2}` and the samples
/// at `k−2, k−1, k`.
#[derive(Debug, Clone)]
pub struct BoostShiftedController {
    spec: StabilizerSpec,
    delta: f64,
    w: Vector,
    samples: VecDeque<(Vector, Vector)>,
    clamp_events: usize,
}

impl BoostShiftedController {
    pub fn new(spec: StabilizerSpec, delta: f64, u_init: Vector) -> Result<Self, ControllerError> {
        check_len("initial input", spec.input_dim(), u_init.len())?;
        Ok(Self {
            spec,
            delta,
            w: u_init,
            samples: VecDeque::with_capacity(3),
            clamp_events: 0,
        })
    }

    pub fn spec(&self) -> &StabilizerSpec {
        &self.spec
    }

    pub fn clamp_events(&self) -> usize {
        self.clamp_events
    }

    /// Internal value `w_{k−2}` used by the next update.
    pub fn internal(&self) -> &Vector {
        &self.w
    }

    /// Feeds the samples `(I_{s,k}, V_k)` and returns the input applied at `k`.
    pub fn next_input(&mut self, i_s: &Vector, v: &Vector) -> Result<Vector, ControllerError> {
        if self.samples.len() == 3 {
            self.samples.pop_front();
        }
        self.samples.push_back((i_s.clone(), v.clone()));
        if self.samples.len() < 3 {
            return Ok(self.w.clone());
        }
        let hist = BoostControllerHistory {
            u_prev2: self.w.clone(),
            i_s: self.samples.iter().map(|s| s.0.clone()).collect(),
            v: self.samples.iter().map(|s| s.1.clone()).collect(),
        };
        let update = boost_controller_update(&hist, &self.spec, self.delta)?;
        if update.clamped {
            self.clamp_events += 1;
        }
        self.w = update.u;
        Ok(self.w.clone())
    }
}

/// Communication incidence matrix with one column per edge, `+1` at the
/// first endpoint and `−1` at the second.
pub fn incidence_matrix(edges: &[(usize, usize)], nodes: usize) -> Result<Matrix, ControllerError> {
    let mut e = Matrix::zeros(nodes, edges.len());
    let mut parent: Vec<usize> = (0..nodes).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for (col, &(a, b)) in edges.iter().enumerate() {
        if a >= nodes || b >= nodes {
            return Err(ControllerError::InvalidIncidence(format!(
                "edge ({a}, {b}) references a node outside 0..{nodes}"
            )));
        }
        if a == b {
            return Err(ControllerError::InvalidIncidence(format!("self-loop at node {a}")));
        }
        e[(a, col)] = 1.0;
        e[(b, col)] = -1.0;
        let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
        parent[ra] = rb;
    }
    if nodes > 0 {
        let r0 = root(&mut parent, 0);
        if (1..nodes).any(|i| root(&mut parent, i) != r0) {
            return Err(ControllerError::DisconnectedGraph);
        }
    }
    Ok(e)
}

/// Numerical rank from singular values above `1e-10 · σ_max`.
pub fn numerical_rank(a: &Matrix) -> usize {
    if a.is_empty() {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let cutoff = 1e-10 * sv.max().max(f64::MIN_POSITIVE);
    sv.iter().filter(|&&s| s > cutoff).count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusSpec {
    pub e: Matrix,
    pub m: Matrix,
    pub k: Matrix,
}

impl ConsensusSpec {
    pub fn new(e: Matrix, m: Matrix, k: Matrix) -> Result<Self, ControllerError> {
        let n = e.nrows();
        check_square("M", &m, n)?;
        check_square("K", &k, n)?;
        let col_sums = e.transpose() * Vector::from_element(n, 1.0);
        if col_sums.amax() > 1e-12 {
            return Err(ControllerError::InvalidIncidence("columns of E must sum to zero".into()));
        }
        if n > 0 && numerical_rank(&e) != n - 1 {
            return Err(ControllerError::InvalidIncidence(format!(
                "rank of E must be {}, got {}",
                n - 1,
                numerical_rank(&e)
            )));
        }
        if !is_well_conditioned(&m) {
            return Err(ControllerError::SingularWeight);
        }
        if !is_positive_semidefinite(&k)? {
            return Err(ControllerError::NotPositiveSemidefinite("K"));
        }
        Ok(Self { e, m, k })
    }

    pub fn input_dim(&self) -> usize {
        self.e.nrows()
    }

    /// `MᵀEEᵀM`.
    pub fn coupling(&self) -> Matrix {
        let em = self.e.transpose() * &self.m;
        em.transpose() * em
    }

    /// Storage `S_y(y, ρ) = (|EᵀMy|² + |y − ρ|²_K)/2`.
    pub fn storage(&self) -> StorageFunction {
        StorageFunction::consensus(&self.e, &self.m, &self.k)
    }

    /// Weighted disagreement `EᵀM y`.
    pub fn disagreement(&self, y: &Vector) -> Vector {
        self.e.transpose() * (&self.m * y)
    }

    /// Quantity `𝟙ᵀM⁻ᵀ(u + K(y − ρ))` preserved by the controller.
    pub fn conserved(&self, u: &Vector, y: &Vector, rho: &Vector) -> Option<f64> {
        let w = u + &self.k * (y - rho);
        self.m.transpose().lu().solve(&w).map(|v| v.sum())
    }
}

/// Stacked residual of both consensus equations with midpoint `σ_δ`.
#[allow(clippy::too_many_arguments)]
pub fn consensus_residual(
    spec: &ConsensusSpec,
    delta: f64,
    u_k: &Vector,
    u_k1: &Vector,
    y_k: &Vector,
    y_k1: &Vector,
    rho_k: &Vector,
    rho_k1: &Vector,
) -> Result<Vector, ControllerError> {
    let m = spec.input_dim();
    for (what, v) in [
        ("u_k", u_k),
        ("u_{k+1}", u_k1),
        ("y_k", y_k),
        ("y_{k+1}", y_k1),
        ("rho_k", rho_k),
        ("rho_{k+1}", rho_k1),
    ] {
        check_len(what, m, v.len())?;
    }
    let sigma_y = (y_k + y_k1) * 0.5;
    let sigma_rho = (rho_k + rho_k1) * 0.5;
    let dy = (y_k1 - y_k) / delta;
    let drho = (rho_k1 - rho_k) / delta;
    let r1 = (u_k1 - u_k) / delta + spec.coupling() * &sigma_y + &spec.k * (dy - &drho);
    let r2 = drho - sigma_y + sigma_rho;
    Ok(Vector::from_iterator(2 * m, r1.iter().chain(r2.iter()).copied()))
}

/// Residual of the controller-state form `Δ_δ ξ_k = −EᵀM σ_δ y_k`.
pub fn consensus_xi_residual(
    spec: &ConsensusSpec,
    delta: f64,
    xi_k: &Vector,
    xi_k1: &Vector,
    y_k: &Vector,
    y_k1: &Vector,
) -> Vector {
    (xi_k1 - xi_k) / delta + em_weight(spec) * ((y_k + y_k1) * 0.5)
}

fn em_weight(spec: &ConsensusSpec) -> Matrix {
    spec.e.transpose() * &spec.m
}

/// Output map of the controller-state form: `u = MᵀEξ − K(y − ρ)`.
pub fn consensus_xi_output(spec: &ConsensusSpec, xi: &Vector, y: &Vector, rho: &Vector) -> Vector {
    spec.m.transpose() * (&spec.e * xi) - &spec.k * (y - rho)
}

/// Consensus controller coupled to a plant output; the controller state
/// is `ρ`.
pub struct ConsensusLoop<'a, O: ?Sized> {
    pub spec: &'a ConsensusSpec,
    pub output: &'a O,
}

impl<O: PassiveOutput + ?Sized> ConsensusLoop<'_, O> {
    fn outputs(&self, w: &LoopWindow) -> (Vector, Vector) {
        let y0 = self.output.passive_output(&((w.x[0] + w.x[1]) * 0.5));
        let y1 = self.output.passive_output(&((w.x[1] + w.x[2]) * 0.5));
        (y0, y1)
    }
}

impl<O: PassiveOutput + ?Sized> LoopController for ConsensusLoop<'_, O> {
    fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    fn state_dim(&self) -> usize {
        self.spec.input_dim()
    }

    fn residual(&self, w: &LoopWindow) -> Vector {
        let (y0, y1) = self.outputs(w);
        consensus_residual(self.spec, w.delta, w.u[0], w.u[1], &y0, &y1, w.c[0], w.c[1])
            .expect("dimensions checked by the loop")
    }

    fn jacobian(&self, w: &LoopWindow) -> Matrix {
        let n = w.x[2].len();
        let m = self.spec.input_dim();
        let d = w.delta;
        let hy = self.output.passive_output_jacobian(&((w.x[1] + w.x[2]) * 0.5)) * 0.5;
        let eye = Matrix::identity(m, m);
        let mut jac = Matrix::zeros(2 * m, n + 2 * m);
        let top = (self.spec.coupling() * 0.5 + &self.spec.k / d) * &hy;
        jac.view_mut((0, 0), (m, n)).copy_from(&top);
        jac.view_mut((0, n), (m, m)).copy_from(&(&eye / d));
        jac.view_mut((0, n + m), (m, m)).copy_from(&(-&self.spec.k / d));
        jac.view_mut((m, 0), (m, n)).copy_from(&(-&hy * 0.5));
        jac.view_mut((m, n + m), (m, m)).copy_from(&(&eye * (1.0 / d + 0.5)));
        jac
    }

    /// `ρ_0 = y_0`.
    fn initial_state(&self, x0: &Vector, x1: &Vector, _u0: &Vector) -> Vector {
        self.output.passive_output(&((x0 + x1) * 0.5))
    }
}

/// Audits `Δ_δ S_y + (Δ_δ y_k)ᵀ Δ_δ u_k + |Δ_δ y_k − Δ_δ ρ_k|²_K = 0`.
pub fn check_assumption_oc(
    spec: &ConsensusSpec,
    delta: f64,
    y_seq: &[Vector],
    rho_seq: &[Vector],
    u_seq: &[Vector],
    tolerance: f64,
) -> Result<DissipationReport, ControllerError> {
    let steps = y_seq
        .len()
        .min(rho_seq.len())
        .min(u_seq.len())
        .saturating_sub(1);
    if steps == 0 {
        return Err(ControllerError::WindowTooShort {
            needed: 2,
            available: y_seq.len().min(rho_seq.len()).min(u_seq.len()),
        });
    }
    let storage = spec.storage();
    let empty = Vector::zeros(0);
    let entries = (0..steps)
        .map(|k| {
            let s0 = storage.evaluate(&y_seq[k], &rho_seq[k], &empty);
            let s1 = storage.evaluate(&y_seq[k + 1], &rho_seq[k + 1], &empty);
            let ds = (s1 - s0) / delta;
            let dy = (&y_seq[k + 1] - &y_seq[k]) / delta;
            let du = (&u_seq[k + 1] - &u_seq[k]) / delta;
            let drho = (&rho_seq[k + 1] - &rho_seq[k]) / delta;
            let cross = dy.dot(&du);
            let gap = &dy - drho;
            let damping = gap.dot(&(&spec.k * &gap));
            AuditEntry::new(k, ds + cross + damping, &[ds, s0 / delta, s1 / delta, cross, damping])
        })
        .collect();
    Ok(DissipationReport::new(AuditMode::Equality, tolerance, entries, Vec::new()))
}
