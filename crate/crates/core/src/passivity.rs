//! Storage functions and trajectory-wise dissipation audits.
//!
//! An audit evaluates a dissipation relation step by step along sampled
//! data and reports the worst residual, normalized by the magnitude of the
//! terms involved: `r_k / (1 + max |term|)`.

use std::io::{self, Write};
use std::sync::Arc;

use thiserror::Error;

use crate::dynamics::{format_value, sequence_delta, Trajectory};
use crate::numerics::{
    is_positive_definite, is_positive_semidefinite, GaussLegendre, Matrix, NumericsError, Vector,
};

/// Default audit tolerance.
pub const AUDIT_TOLERANCE: f64 = 1e-9;

/// Default quadrature order for the shifted output.
pub const SHIFTED_OUTPUT_ORDER: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PassivityError {
    #[error("trajectory too short: need at least {needed} samples, have {available}")]
    WindowTooShort { needed: usize, available: usize },
    #[error("trajectories are not comparable: {0}")]
    MismatchedSystems(String),
    #[error("solver tolerance {solver:e} is not 10x tighter than audit tolerance {audit:e}")]
    ToleranceTooLoose { solver: f64, audit: f64 },
    #[error("trajectory has no outputs")]
    MissingOutputs,
    #[error("charge {value:e} at node {node} is not positive")]
    NonpositiveCharge { node: usize, value: f64 },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditMode {
    /// Residuals must not exceed the tolerance.
    Inequality,
    /// Residual magnitudes must not exceed the tolerance.
    Equality,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditEntry {
    pub k: usize,
    /// Left-hand side minus right-hand side.
    pub residual: f64,
    /// Largest magnitude among the terms of the relation.
    pub scale: f64,
}

impl AuditEntry {
    pub fn new(k: usize, residual: f64, terms: &[f64]) -> Self {
        let scale = terms.iter().fold(0.0_f64, |a, t| a.max(t.abs()));
        Self { k, residual, scale }
    }

    pub fn normalized(&self) -> f64 {
        self.residual / (1.0 + self.scale)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DissipationReport {
    pub mode: AuditMode,
    pub entries: Vec<AuditEntry>,
    /// Steps that could not be audited because the window left the data.
    pub skipped: Vec<usize>,
    pub tolerance: f64,
    pub max_violation: f64,
    pub satisfied: bool,
}

impl DissipationReport {
    pub fn new(mode: AuditMode, tolerance: f64, entries: Vec<AuditEntry>, skipped: Vec<usize>) -> Self {
        let max_violation = entries
            .iter()
            .map(|e| match mode {
                AuditMode::Inequality => e.normalized(),
                AuditMode::Equality => e.normalized().abs(),
            })
            .fold(0.0_f64, f64::max);
        let finite = entries.iter().all(|e| e.residual.is_finite());
        Self {
            mode,
            entries,
            skipped,
            tolerance,
            max_violation,
            satisfied: finite && max_violation <= tolerance,
        }
    }

    /// Largest raw residual magnitude.
    pub fn max_abs_residual(&self) -> f64 {
        self.entries.iter().fold(0.0, |a, e| a.max(e.residual.abs()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `k,residual` rows (normalized residuals) followed by a
    /// `max_violation,tolerance,satisfied` summary.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "k,residual")?;
        for e in &self.entries {
            writeln!(w, "{},{}", e.k, format_value(e.normalized()))?;
        }
        writeln!(w, "max_violation,tolerance,satisfied")?;
        writeln!(
            w,
            "{},{},{}",
            format_value(self.max_violation),
            format_value(self.tolerance),
            self.satisfied
        )
    }
}

type StorageFn = dyn Fn(&Vector, &Vector, &Vector) -> f64 + Send + Sync;

/// Energy-like functions used by the audits.
///
/// Each variant reads its own arguments from the triple passed to
/// [`StorageFunction::evaluate`]:
/// - `KrasovskiiQuadratic(H)`: `(x_k, u_k, Δx_k) ↦ |Δx_k|²_H / 2`
/// - `IncrementalQuadratic(H)`: `(x, x', _) ↦ |x − x'|²_H / 2`
/// - `ShiftedQuadratic`: `(u, _, _) ↦ |u − u*|²_{K2} / 2`
/// - `ConsensusQuadratic`: `(y, ρ, _) ↦ (|EᵀMy|² + |y − ρ|²_K) / 2`
/// - `Custom(f)`: `f(a, b, c)`
#[derive(Clone)]
pub enum StorageFunction {
    KrasovskiiQuadratic(Matrix),
    IncrementalQuadratic(Matrix),
    ShiftedQuadratic { u_star: Vector, k2: Matrix },
    ConsensusQuadratic { et_m: Matrix, k: Matrix },
    Custom(Arc<StorageFn>),
}

impl std::fmt::Debug for StorageFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::KrasovskiiQuadratic(h) => f.debug_tuple("KrasovskiiQuadratic").field(h).finish(),
            Self::IncrementalQuadratic(h) => f.debug_tuple("IncrementalQuadratic").field(h).finish(),
            Self::ShiftedQuadratic { u_star, k2 } => f
                .debug_struct("ShiftedQuadratic")
                .field("u_star", u_star)
                .field("k2", k2)
                .finish(),
            Self::ConsensusQuadratic { et_m, k } => f
                .debug_struct("ConsensusQuadratic")
                .field("et_m", et_m)
                .field("k", k)
                .finish(),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

fn half_norm(v: &Vector, p: &Matrix) -> f64 {
    0.5 * v.dot(&(p * v))
}

impl StorageFunction {
    pub fn consensus(e: &Matrix, m: &Matrix, k: &Matrix) -> Self {
        Self::ConsensusQuadratic {
            et_m: e.transpose() * m,
            k: k.clone(),
        }
    }

    pub fn custom<F>(f: F) -> Self
    where
        F: Fn(&Vector, &Vector, &Vector) -> f64 + Send + Sync + 'static,
    {
        Self::Custom(Arc::new(f))
    }

    pub fn evaluate(&self, a: &Vector, b: &Vector, c: &Vector) -> f64 {
        match self {
            Self::KrasovskiiQuadratic(h) => half_norm(c, h),
            Self::IncrementalQuadratic(h) => half_norm(&(a - b), h),
            Self::ShiftedQuadratic { u_star, k2 } => half_norm(&(a - u_star), k2),
            Self::ConsensusQuadratic { et_m, k } => {
                0.5 * (et_m * a).norm_squared() + half_norm(&(a - b), k)
            }
            Self::Custom(f) => f(a, b, c),
        }
    }
}

/// Samples entering one step of the Krasovskii relation at index `k`.
#[derive(Debug, Clone, Copy)]
pub struct KrasovskiiWindow<'a> {
    pub k: usize,
    pub delta: f64,
    /// `x_k, x_{k+1}, x_{k+2}`.
    pub x: [&'a Vector; 3],
    /// `u_k, u_{k+1}`.
    pub u: [&'a Vector; 2],
}

impl KrasovskiiWindow<'_> {
    /// `Δ_δ σ_δ x_k` for the midpoint operator.
    pub fn delta_sigma_x(&self) -> Vector {
        (self.x[2] - self.x[0]) / (2.0 * self.delta)
    }

    /// `v_k = Δ_δ u_k`.
    pub fn input_rate(&self) -> Vector {
        (self.u[1] - self.u[0]) / self.delta
    }
}

type WindowVector<'a> = Box<dyn Fn(&KrasovskiiWindow) -> Vector + 'a>;
type WindowScalar<'a> = Box<dyn Fn(&KrasovskiiWindow) -> f64 + 'a>;

/// Passive output `z_k` and dissipation `W_K` of a Krasovskii relation.
///
/// `exogenous` carries contributions of piecewise-constant parameter
/// changes (load steps), which enter the exact energy balance at the
/// switching step only; it is zero for autonomous plants.
pub struct SupplyRate<'a> {
    pub output: WindowVector<'a>,
    pub dissipation: WindowScalar<'a>,
    pub exogenous: Option<WindowScalar<'a>>,
}

impl<'a> SupplyRate<'a> {
    pub fn new<Z, W>(output: Z, dissipation: W) -> Self
    where
        Z: Fn(&KrasovskiiWindow) -> Vector + 'a,
        W: Fn(&KrasovskiiWindow) -> f64 + 'a,
    {
        Self {
            output: Box::new(output),
            dissipation: Box::new(dissipation),
            exogenous: None,
        }
    }

    pub fn with_exogenous<E>(mut self, e: E) -> Self
    where
        E: Fn(&KrasovskiiWindow) -> f64 + 'a,
    {
        self.exogenous = Some(Box::new(e));
        self
    }
}

fn check_solver_tolerance(traj: &Trajectory, tolerance: f64) -> Result<(), PassivityError> {
    if let Some(solver) = traj.solver_tolerance() {
        if solver * 10.0 > tolerance {
            return Err(PassivityError::ToleranceTooLoose {
                solver,
                audit: tolerance,
            });
        }
    }
    Ok(())
}

/// Audits `Δ_δ S_K + W_K − v_kᵀ z_k ≤ 0` (or `= 0` in equality mode) along
/// a trajectory.
///
/// Step `k` needs `x_{k+2}` and `u_{k+1}`; steps beyond the data are listed
/// as skipped.
pub fn audit_krasovskii(
    traj: &Trajectory,
    storage: &StorageFunction,
    supply: &SupplyRate,
    mode: AuditMode,
    tolerance: f64,
) -> Result<DissipationReport, PassivityError> {
    check_solver_tolerance(traj, tolerance)?;
    let xs = traj.states();
    let us = traj.inputs();
    let delta = traj.delta();
    let steps = xs.len().saturating_sub(1);
    let audited = xs.len().saturating_sub(2).min(us.len().saturating_sub(1));
    if audited == 0 {
        return Err(PassivityError::WindowTooShort {
            needed: 3,
            available: xs.len(),
        });
    }
    let dx: Vec<Vector> = (0..steps).map(|k| (&xs[k + 1] - &xs[k]) / delta).collect();
    let mut entries = Vec::with_capacity(audited);
    for k in 0..audited {
        let w = KrasovskiiWindow {
            k,
            delta,
            x: [&xs[k], &xs[k + 1], &xs[k + 2]],
            u: [&us[k], &us[k + 1]],
        };
        let s0 = storage.evaluate(&xs[k], &us[k], &dx[k]);
        let s1 = storage.evaluate(&xs[k + 1], &us[k + 1], &dx[k + 1]);
        let ds = (s1 - s0) / delta;
        let wk = (supply.dissipation)(&w);
        let supply_term = w.input_rate().dot(&(supply.output)(&w));
        let exo = supply.exogenous.as_ref().map_or(0.0, |e| e(&w));
        entries.push(AuditEntry::new(
            k,
            ds + wk - supply_term - exo,
            &[ds, s0 / delta, s1 / delta, wk, supply_term, exo],
        ));
    }
    let skipped = (audited..steps).collect();
    Ok(DissipationReport::new(mode, tolerance, entries, skipped))
}

/// Audits `Δ_δ S_I(x_k, x'_k) ≤ (u_k − u'_k)ᵀ(y_k − y'_k)` for two
/// trajectories of the same explicit system with recorded outputs.
pub fn audit_incremental(
    traj_a: &Trajectory,
    traj_b: &Trajectory,
    storage: &StorageFunction,
    tolerance: f64,
) -> Result<DissipationReport, PassivityError> {
    if (traj_a.delta() - traj_b.delta()).abs() > 0.0 {
        return Err(PassivityError::MismatchedSystems(format!(
            "sampling periods {} and {}",
            traj_a.delta(),
            traj_b.delta()
        )));
    }
    if traj_a.len() != traj_b.len() {
        return Err(PassivityError::MismatchedSystems(format!(
            "lengths {} and {}",
            traj_a.len(),
            traj_b.len()
        )));
    }
    check_solver_tolerance(traj_a, tolerance)?;
    check_solver_tolerance(traj_b, tolerance)?;
    let (xa, xb) = (traj_a.states(), traj_b.states());
    let (ua, ub) = (traj_a.inputs(), traj_b.inputs());
    let (ya, yb) = (traj_a.outputs(), traj_b.outputs());
    let steps = xa.len() - 1;
    let audited = steps.min(ua.len()).min(ub.len()).min(ya.len()).min(yb.len());
    if ya.is_empty() || yb.is_empty() {
        return Err(PassivityError::MissingOutputs);
    }
    let delta = traj_a.delta();
    let empty = Vector::zeros(0);
    let mut entries = Vec::with_capacity(audited);
    for k in 0..audited {
        let s0 = storage.evaluate(&xa[k], &xb[k], &empty);
        let s1 = storage.evaluate(&xa[k + 1], &xb[k + 1], &empty);
        let ds = (s1 - s0) / delta;
        let supply = (&ua[k] - &ub[k]).dot(&(&ya[k] - &yb[k]));
        entries.push(AuditEntry::new(k, ds - supply, &[ds, s0 / delta, s1 / delta, supply]));
    }
    Ok(DissipationReport::new(
        AuditMode::Inequality,
        tolerance,
        entries,
        (audited..steps).collect(),
    ))
}

/// Audits the shifted relation `Δ_δ S_S(x_k) ≤ (u_k − u*)ᵀ(y_k − y*)`
/// for a storage `S_S`, outputs `y_k` and a constant `y*`.
pub fn audit_shifted<S>(
    traj: &Trajectory,
    storage: S,
    outputs: &[Vector],
    u_star: &Vector,
    y_star: &Vector,
    tolerance: f64,
) -> Result<DissipationReport, PassivityError>
where
    S: Fn(&Vector) -> f64,
{
    check_solver_tolerance(traj, tolerance)?;
    let xs = traj.states();
    let us = traj.inputs();
    let steps = xs.len() - 1;
    let audited = steps.min(us.len()).min(outputs.len());
    if audited == 0 {
        return Err(PassivityError::WindowTooShort {
            needed: 2,
            available: xs.len(),
        });
    }
    let delta = traj.delta();
    let mut entries = Vec::with_capacity(audited);
    for k in 0..audited {
        let s0 = storage(&xs[k]);
        let s1 = storage(&xs[k + 1]);
        let ds = (s1 - s0) / delta;
        let supply = (&us[k] - u_star).dot(&(&outputs[k] - y_star));
        entries.push(AuditEntry::new(k, ds - supply, &[ds, s0 / delta, s1 / delta, supply]));
    }
    Ok(DissipationReport::new(
        AuditMode::Inequality,
        tolerance,
        entries,
        (audited..steps).collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KpCertificate {
    StrictlyKrasovskiiPassive,
    KrasovskiiPassive,
    Inconclusive,
}

/// Krasovskii passivity of a midpoint-discretized linear port-Hamiltonian
/// system from the definiteness of `H` and `R`.
pub fn lph_krasovskii_certificate(h: &Matrix, r: &Matrix) -> Result<KpCertificate, PassivityError> {
    if is_positive_definite(h)? && is_positive_definite(r)? {
        return Ok(KpCertificate::StrictlyKrasovskiiPassive);
    }
    if is_positive_semidefinite(h)? && is_positive_semidefinite(r)? {
        return Ok(KpCertificate::KrasovskiiPassive);
    }
    Ok(KpCertificate::Inconclusive)
}

/// Central-difference gradient with step `1e-6 (1 + |u_i|)`.
pub fn fd_gradient<F: Fn(&Vector) -> f64>(f: F, u: &Vector) -> Vector {
    let mut probe = u.clone();
    Vector::from_fn(u.len(), |i, _| {
        let h = 1e-6 * (1.0 + u[i].abs());
        probe[i] = u[i] + h;
        let fp = f(&probe);
        probe[i] = u[i] - h;
        let fm = f(&probe);
        probe[i] = u[i];
        (fp - fm) / (2.0 * h)
    })
}

/// `y_k = δ ∫₀¹ ∇φ(s u_k + (1 − s) u*) ds` by Gauss–Legendre quadrature,
/// where `φ(u) = Ŝ_K(F_δ(x_k, u), u*)` and `gradient` evaluates `∇φ`.
pub fn shifted_output<G>(
    gradient: G,
    u_k: &Vector,
    u_star: &Vector,
    delta: f64,
    order: usize,
) -> Result<Vector, PassivityError>
where
    G: Fn(&Vector) -> Vector,
{
    let rule = GaussLegendre::new(order)?;
    let mut acc = Vector::zeros(u_k.len());
    for (s, w) in rule.nodes.iter().zip(&rule.weights) {
        let u = u_k * *s + u_star * (1.0 - s);
        let g = gradient(&u);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite.into());
        }
        acc += g * *w;
    }
    Ok(acc * delta)
}

/// [`shifted_output`] with `∇φ` from central differences of
/// `u ↦ Ŝ_K(F_δ(x_k, u), u*)`.
pub fn shifted_output_fd<F, S>(
    step: F,
    s_hat: S,
    x_k: &Vector,
    u_k: &Vector,
    u_star: &Vector,
    delta: f64,
    order: usize,
) -> Result<Vector, PassivityError>
where
    F: Fn(&Vector, &Vector) -> Vector,
    S: Fn(&Vector, &Vector) -> f64,
{
    let phi = |u: &Vector| s_hat(&step(x_k, u), u_star);
    shifted_output(|u| fd_gradient(phi, u), u_k, u_star, delta, order)
}

/// Explicit one-step map `x_{k+1} = F_δ(x_k, u_k)`.
pub type StepMap = Arc<dyn Fn(&Vector, &Vector) -> Vector + Send + Sync>;

/// `Ŝ_K(x, u) = S_I(x, F_δ(x, u)) / δ²`, evaluated as
/// `(x_k, u_k, _) ↦ Ŝ_K(x_k, u_k)`.
pub fn construct_kp_from_ip(s_i: StorageFunction, step: StepMap, delta: f64) -> StorageFunction {
    let empty = Vector::zeros(0);
    StorageFunction::custom(move |x, u, _| s_i.evaluate(x, &step(x, u), &empty) / (delta * delta))
}

/// Strict Krasovskii passivity condition of the buck network along a
/// window: `G_L − C² diag(P_L) diag(q_k ∘ q_{k+2})⁻¹ ≻ 0`.
pub fn buck_strict_kp_condition(
    q_k: &Vector,
    q_k2: &Vector,
    net: &crate::plants::buck::BuckNetwork,
    load_power: &Vector,
) -> Result<bool, PassivityError> {
    for (node, v) in q_k.iter().chain(q_k2.iter()).enumerate() {
        if !(*v > 0.0) {
            return Err(PassivityError::NonpositiveCharge {
                node: node % q_k.len(),
                value: *v,
            });
        }
    }
    let n = q_k.len();
    let c = &net.capacitance;
    let m = Matrix::from_fn(n, n, |i, j| {
        let base = net.load_conductance[(i, j)];
        if i == j {
            base - c[i] * c[i] * load_power[i] / (q_k[i] * q_k2[i])
        } else {
            base
        }
    });
    let sym = (&m + m.transpose()) * 0.5;
    Ok(is_positive_definite(&sym)?)
}

/// Differences `Δ_δ y_k` of a sampled output sequence.
pub fn output_rates(outputs: &[Vector], delta: f64) -> Vec<Vector> {
    (0..outputs.len().saturating_sub(1))
        .map(|k| sequence_delta(outputs, k, delta).expect("index in range"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Scheme;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn report_flags_violation() {
        let r = DissipationReport::new(
            AuditMode::Inequality,
            1e-9,
            vec![AuditEntry::new(0, -1.0, &[1.0]), AuditEntry::new(1, 2.0, &[1.0])],
            vec![],
        );
        assert!(!r.satisfied);
        assert_eq!(r.max_violation, 1.0);
        let ok = DissipationReport::new(AuditMode::Inequality, 1e-9, vec![AuditEntry::new(0, -1.0, &[1.0])], vec![]);
        assert!(ok.satisfied);
        let eq = DissipationReport::new(AuditMode::Equality, 1e-9, vec![AuditEntry::new(0, -1.0, &[1.0])], vec![]);
        assert!(!eq.satisfied);
    }

    #[test]
    fn report_csv_has_summary() {
        let r = DissipationReport::new(AuditMode::Equality, 1e-9, vec![AuditEntry::new(3, 0.0, &[])], vec![]);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "k,residual");
        assert!(lines[1].starts_with("3,"));
        assert_eq!(lines[2], "max_violation,tolerance,satisfied");
        assert!(lines[3].ends_with(",true"));
    }

    #[test]
    fn certificates() {
        let i = Matrix::identity(2, 2);
        assert_eq!(
            lph_krasovskii_certificate(&i, &i).unwrap(),
            KpCertificate::StrictlyKrasovskiiPassive
        );
        let semi = Matrix::from_diagonal(&v(&[1.0, 0.0]));
        assert_eq!(lph_krasovskii_certificate(&i, &semi).unwrap(), KpCertificate::KrasovskiiPassive);
        let indefinite = Matrix::from_diagonal(&v(&[1.0, -1.0]));
        assert_eq!(lph_krasovskii_certificate(&indefinite, &i).unwrap(), KpCertificate::Inconclusive);
        let skew = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(matches!(
            lph_krasovskii_certificate(&skew, &i),
            Err(PassivityError::Numerics(NumericsError::NotSymmetric { .. }))
        ));
    }

    #[test]
    fn constant_trajectory_audits_to_zero() {
        let x = v(&[1.0, 2.0]);
        let traj = Trajectory::new(0.1, Scheme::ImplicitMidpoint, vec![x.clone(); 6], vec![v(&[0.5]); 6]).unwrap();
        let h = Matrix::identity(2, 2);
        let supply = SupplyRate::new(
            |w| Vector::from_element(1, w.delta_sigma_x().sum()),
            |w| w.delta_sigma_x().norm_squared(),
        );
        let r = audit_krasovskii(&traj, &StorageFunction::KrasovskiiQuadratic(h), &supply, AuditMode::Equality, 1e-9)
            .unwrap();
        assert!(r.satisfied);
        assert!(r.entries.iter().all(|e| e.residual == 0.0));
        assert_eq!(r.entries.len(), 4);
        assert_eq!(r.skipped, vec![4]);
    }

    #[test]
    fn short_trajectory_is_rejected() {
        let traj = Trajectory::new(0.1, Scheme::ImplicitMidpoint, vec![v(&[0.0]); 2], vec![v(&[0.0]); 1]).unwrap();
        let supply = SupplyRate::new(|_| v(&[0.0]), |_| 0.0);
        let err = audit_krasovskii(
            &traj,
            &StorageFunction::KrasovskiiQuadratic(Matrix::identity(1, 1)),
            &supply,
            AuditMode::Equality,
            1e-9,
        )
        .unwrap_err();
        assert!(matches!(err, PassivityError::WindowTooShort { .. }));
    }

    #[test]
    fn loose_solver_tolerance_is_rejected() {
        let traj = Trajectory::new(0.1, Scheme::ImplicitMidpoint, vec![v(&[0.0]); 5], vec![v(&[0.0]); 4])
            .unwrap()
            .with_solver_tolerance(1e-9);
        let supply = SupplyRate::new(|_| v(&[0.0]), |_| 0.0);
        let err = audit_krasovskii(
            &traj,
            &StorageFunction::KrasovskiiQuadratic(Matrix::identity(1, 1)),
            &supply,
            AuditMode::Equality,
            1e-9,
        )
        .unwrap_err();
        assert!(matches!(err, PassivityError::ToleranceTooLoose { .. }));
    }

    #[test]
    fn storage_variants() {
        let h = Matrix::from_diagonal(&v(&[2.0, 4.0]));
        let a = v(&[1.0, 1.0]);
        let b = v(&[0.0, 1.0]);
        assert_eq!(StorageFunction::KrasovskiiQuadratic(h.clone()).evaluate(&b, &b, &a), 3.0);
        assert_eq!(StorageFunction::IncrementalQuadratic(h.clone()).evaluate(&a, &b, &b), 1.0);
        assert_eq!(StorageFunction::IncrementalQuadratic(h.clone()).evaluate(&a, &a, &b), 0.0);
        let s = StorageFunction::ShiftedQuadratic { u_star: b.clone(), k2: h.clone() };
        assert_eq!(s.evaluate(&b, &a, &a), 0.0);
        let e = Matrix::from_column_slice(2, 1, &[1.0, -1.0]);
        let c = StorageFunction::consensus(&e, &Matrix::identity(2, 2), &Matrix::identity(2, 2));
        assert_eq!(c.evaluate(&v(&[3.0, 3.0]), &v(&[3.0, 3.0]), &a), 0.0);
        assert_eq!(c.evaluate(&v(&[1.0, 0.0]), &v(&[0.0, 0.0]), &a), 1.0);
    }

    #[test]
    fn shifted_output_vanishes_at_target_input() {
        let u = v(&[0.3, -0.2]);
        let y = shifted_output(|w| (w - &u) * 3.0, &u, &u, 0.1, 8).unwrap();
        assert!(y.amax() < 1e-15);
        let y = shifted_output(|w| w * 3.0 + v(&[1.0, 1.0]), &u, &u, 0.1, 8).unwrap();
        assert_eq!((&u - &u).dot(&y), 0.0);
    }

    #[test]
    fn shifted_output_quadratic_closed_form() {
        // φ(u) = a (u − c)² / 2, so ∇φ is affine and the integral is exact.
        let (a, c, delta) = (3.5, 0.4, 0.05);
        let (uk, us) = (1.3, -0.6);
        let y = shifted_output(|u| u.map(|x| a * (x - c)), &v(&[uk]), &v(&[us]), delta, 2).unwrap();
        let exact = delta * a * ((uk + us) / 2.0 - c);
        assert!((y[0] - exact).abs() < 1e-12);
    }

    #[test]
    fn fd_gradient_of_quadratic() {
        let g = fd_gradient(|u| u.norm_squared(), &v(&[1.0, -2.0]));
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] + 4.0).abs() < 1e-8);
    }
}
