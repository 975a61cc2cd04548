//! Dense numerical kernels shared by the simulators and auditors.
//!
//! Everything here is a pure function of its inputs. Matrices are
//! `nalgebra::DMatrix<f64>`; problem sizes are small (tens of states), so no
//! structure is exploited.

use nalgebra::{DMatrix, DVector, Schur};
use thiserror::Error;

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("Newton iteration did not converge after {iterations} iterations (residual {last_residual_norm:e})")]
    NonConvergence {
        iterations: usize,
        last_residual_norm: f64,
    },
    #[error("singular Jacobian at Newton iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("Newton iterate left the admissible domain at iteration {iteration}")]
    DomainViolation { iteration: usize },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("quadrature order {0} outside the supported range 2..=16")]
    UnsupportedOrder(usize),
    #[error("eigenvalue iteration failed to converge")]
    EigenFailure,
    #[error("non-finite value encountered")]
    NonFinite,
}

/// Settings for [`solve_newton`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonSettings {
    /// Sup-norm residual threshold.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Step length multiplier in (0, 1].
    pub damping: f64,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iterations: 50,
            damping: 1.0,
        }
    }
}

impl NewtonSettings {
    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_max_iterations(mut self, max_iterations: usize) -> Self {
        self.max_iterations = max_iterations;
        self
    }

    pub fn with_damping(mut self, damping: f64) -> Self {
        self.damping = damping;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.tolerance > 0.0) {
            return Err(format!("Newton tolerance must be positive, got {}", self.tolerance));
        }
        if self.max_iterations == 0 {
            return Err("Newton max_iterations must be at least 1".into());
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(format!("Newton damping must lie in (0, 1], got {}", self.damping));
        }
        Ok(())
    }
}

pub fn sup_norm(v: &Vector) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Solves `residual(z) = 0` by Newton's method starting from `guess`.
///
/// Converges when the sup-norm of the residual drops below the tolerance.
/// An iterate whose Newton update falls below the floating-point resolution
/// of `z` is also accepted: the residual is then at its roundoff floor and
/// further iterations cannot reduce it.
pub fn solve_newton<R, J>(
    residual: R,
    jacobian: J,
    guess: &Vector,
    settings: &NewtonSettings,
) -> Result<Vector, NumericsError>
where
    R: Fn(&Vector) -> Vector,
    J: Fn(&Vector) -> Matrix,
{
    solve_newton_guarded(residual, jacobian, guess, settings, |_| true)
}

/// [`solve_newton`] with an admissibility predicate. Inadmissible iterates
/// are pulled back by halving the step; after 30 halvings the solve aborts
/// with [`NumericsError::DomainViolation`].
pub fn solve_newton_guarded<R, J, A>(
    residual: R,
    jacobian: J,
    guess: &Vector,
    settings: &NewtonSettings,
    admissible: A,
) -> Result<Vector, NumericsError>
where
    R: Fn(&Vector) -> Vector,
    J: Fn(&Vector) -> Matrix,
    A: Fn(&Vector) -> bool,
{
    let mut z = guess.clone();
    if !admissible(&z) {
        return Err(NumericsError::DomainViolation { iteration: 0 });
    }
    let mut r = residual(&z);
    let mut r_norm = sup_norm(&r);
    if !r_norm.is_finite() {
        return Err(NumericsError::NonFinite);
    }
    for iteration in 0..settings.max_iterations {
        if r_norm <= settings.tolerance {
            return Ok(z);
        }
        let jac = jacobian(&z);
        let step = jac
            .lu()
            .solve(&r)
            .filter(|s| s.iter().all(|v| v.is_finite()))
            .ok_or(NumericsError::SingularJacobian { iteration })?;

        let mut scale = settings.damping;
        let mut candidate = &z - &step * scale;
        let mut halvings = 0;
        while !admissible(&candidate) {
            halvings += 1;
            if halvings > 30 {
                return Err(NumericsError::DomainViolation { iteration });
            }
            scale *= 0.5;
            candidate = &z - &step * scale;
        }

        let step_norm = sup_norm(&step) * scale;
        let resolution = 64.0 * f64::EPSILON * (1.0 + sup_norm(&candidate));
        z = candidate;
        r = residual(&z);
        r_norm = sup_norm(&r);
        if !r_norm.is_finite() {
            return Err(NumericsError::NonFinite);
        }
        if step_norm <= resolution && scale == settings.damping {
            return Ok(z);
        }
    }
    if r_norm <= settings.tolerance {
        return Ok(z);
    }
    Err(NumericsError::NonConvergence {
        iterations: settings.max_iterations,
        last_residual_norm: r_norm,
    })
}

/// Central-difference Jacobian with per-coordinate step `1e-7 * (1 + |z_j|)`.
pub fn finite_difference_jacobian<F>(f: F, z: &Vector) -> Matrix
where
    F: Fn(&Vector) -> Vector,
{
    let n = z.len();
    let mut columns = Vec::with_capacity(n);
    let mut probe = z.clone();
    for j in 0..n {
        let h = 1e-7 * (1.0 + z[j].abs());
        probe[j] = z[j] + h;
        let fp = f(&probe);
        probe[j] = z[j] - h;
        let fm = f(&probe);
        probe[j] = z[j];
        columns.push((fp - fm) / (2.0 * h));
    }
    let rows = columns.first().map_or(0, |c| c.len());
    Matrix::from_fn(rows, n, |i, j| columns[j][i])
}

fn require_square(a: &Matrix) -> Result<(), NumericsError> {
    if a.nrows() != a.ncols() {
        return Err(NumericsError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    Ok(())
}

/// Eigenvalues of a general real square matrix.
pub fn eigenvalues(a: &Matrix) -> Result<Vec<nalgebra::Complex<f64>>, NumericsError> {
    require_square(a)?;
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite);
    }
    let schur = Schur::try_new(a.clone(), f64::EPSILON, 10_000).ok_or(NumericsError::EigenFailure)?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(a: &Matrix) -> Result<f64, NumericsError> {
    Ok(eigenvalues(a)?
        .into_iter()
        .fold(0.0_f64, |acc, l| acc.max(l.norm())))
}

const SYMMETRY_TOLERANCE: f64 = 1e-12;
const DEFINITENESS_FLOOR: f64 = 1e-12;

fn check_symmetric(p: &Matrix) -> Result<(), NumericsError> {
    require_square(p)?;
    let scale = 1.0_f64.max(p.amax());
    let asymmetry = (p - p.transpose()).amax();
    if asymmetry > SYMMETRY_TOLERANCE * scale {
        return Err(NumericsError::NotSymmetric { asymmetry });
    }
    Ok(())
}

fn symmetric_eigenvalues(p: &Matrix) -> Result<Vector, NumericsError> {
    check_symmetric(p)?;
    let sym = (p + p.transpose()) * 0.5;
    Ok(sym.symmetric_eigen().eigenvalues)
}

/// `P ≻ 0`: every eigenvalue of the symmetric matrix exceeds `1e-12`.
pub fn is_positive_definite(p: &Matrix) -> Result<bool, NumericsError> {
    if p.nrows() == 0 {
        return Ok(p.ncols() == 0);
    }
    Ok(symmetric_eigenvalues(p)?.iter().all(|&l| l > DEFINITENESS_FLOOR))
}

/// `P ⪰ 0` up to a roundoff allowance relative to the largest eigenvalue.
pub fn is_positive_semidefinite(p: &Matrix) -> Result<bool, NumericsError> {
    if p.nrows() == 0 {
        return Ok(p.ncols() == 0);
    }
    let eig = symmetric_eigenvalues(p)?;
    let scale = eig.amax().max(1.0);
    Ok(eig.iter().all(|&l| l >= -DEFINITENESS_FLOOR * scale))
}

pub fn min_symmetric_eigenvalue(p: &Matrix) -> Result<f64, NumericsError> {
    Ok(symmetric_eigenvalues(p)?.min())
}

/// `xᵀ P x`.
pub fn weighted_norm_sq(x: &Vector, p: &Matrix) -> Result<f64, NumericsError> {
    if p.nrows() != x.len() || p.ncols() != x.len() {
        return Err(NumericsError::DimensionMismatch {
            expected: p.nrows(),
            actual: x.len(),
        });
    }
    Ok(x.dot(&(p * x)))
}

/// 2-norm condition number; infinite for singular matrices.
pub fn condition_number(a: &Matrix) -> f64 {
    if a.nrows() == 0 {
        return 1.0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Condition-number threshold above which a well-posedness matrix is
/// treated as singular.
pub const INVERTIBILITY_CONDITION_LIMIT: f64 = 1e12;

pub fn is_well_conditioned(a: &Matrix) -> bool {
    condition_number(a) < INVERTIBILITY_CONDITION_LIMIT
}

/// Gauss–Legendre nodes and weights mapped onto `[0, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(order: usize) -> Result<Self, NumericsError> {
        if !(2..=16).contains(&order) {
            return Err(NumericsError::UnsupportedOrder(order));
        }
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        // Roots of P_n on [-1, 1] by Newton from the Chebyshev-like guess.
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Ok(Self {
            nodes: nodes.iter().map(|x| 0.5 * (x + 1.0)).collect(),
            weights: weights.iter().map(|w| 0.5 * w).collect(),
        })
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&s, &w)| w * f(s))
            .sum()
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Fixed-order Gauss–Legendre quadrature of `f` over `[0, 1]`.
pub fn gauss_legendre_integrate<F: FnMut(f64) -> f64>(f: F, order: usize) -> Result<f64, NumericsError> {
    let value = GaussLegendre::new(order)?.integrate(f);
    if value.is_finite() {
        Ok(value)
    } else {
        Err(NumericsError::NonFinite)
    }
}

/// Block-diagonal matrix from square blocks.
pub fn block_diag(blocks: &[&Matrix]) -> Matrix {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let m: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(n, m);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn diag(v: &Vector) -> Matrix {
    Matrix::from_diagonal(v)
}

pub fn hadamard(a: &Vector, b: &Vector) -> Vector {
    a.component_mul(b)
}
