//! Joint implicit solves of a sampled plant and a sampled controller.
//!
//! The controller step at index `k` references `x_{k+2}` through `σ_δ` terms
//! while the plant step at `k+1` uses `u_{k+1}`, so both are solved together
//! for `(x_{k+2}, u_{k+1}, c_{k+1})`, where `c` is the controller state.

use crate::numerics::{
    condition_number, finite_difference_jacobian, solve_newton_guarded, Matrix, NewtonSettings,
    Vector, INVERTIBILITY_CONDITION_LIMIT,
};

use super::{check_dim, DynamicsError, SampledModel, Trajectory};

/// Samples visible to the controller residual at index `k`.
#[derive(Debug, Clone, Copy)]
pub struct LoopWindow<'a> {
    pub k: usize,
    pub delta: f64,
    /// `x_k, x_{k+1}, x_{k+2}`.
    pub x: [&'a Vector; 3],
    /// Designed inputs `u_k, u_{k+1}`.
    pub u: [&'a Vector; 2],
    /// Controller states `c_k, c_{k+1}`.
    pub c: [&'a Vector; 2],
}

pub trait LoopController {
    fn input_dim(&self) -> usize;

    fn state_dim(&self) -> usize {
        0
    }

    /// Residual of the controller step, of length `input_dim + state_dim`.
    fn residual(&self, w: &LoopWindow) -> Vector;

    /// Jacobian of [`LoopController::residual`] with respect to the stacked
    /// unknown `(x_{k+2}, u_{k+1}, c_{k+1})`.
    fn jacobian(&self, w: &LoopWindow) -> Matrix {
        let n = w.x[2].len();
        let m = w.u[1].len();
        let z = stack(w.x[2], w.u[1], w.c[1]);
        finite_difference_jacobian(
            |z| {
                let (x2, u1, c1) = split(z, n, m);
                self.residual(&LoopWindow {
                    x: [w.x[0], w.x[1], &x2],
                    u: [w.u[0], &u1],
                    c: [w.c[0], &c1],
                    ..*w
                })
            },
            &z,
        )
    }

    fn initial_state(&self, _x0: &Vector, _x1: &Vector, _u0: &Vector) -> Vector {
        Vector::zeros(self.state_dim())
    }
}

/// Offset added to the designed input before actuation: `a_k = u_k + o(k, x_k)`.
pub type Feedforward<'a> = &'a dyn Fn(usize, &Vector) -> Vector;

#[derive(Debug, Clone)]
pub struct ClosedLoopRun {
    /// Plant states with the applied (actuated) inputs.
    pub plant: Trajectory,
    /// Controller outputs before feedforward.
    pub designed: Vec<Vector>,
    pub controller_states: Vec<Vector>,
    /// Condition number of the first joint step Jacobian.
    pub initial_condition: f64,
}

fn stack(a: &Vector, b: &Vector, c: &Vector) -> Vector {
    Vector::from_iterator(
        a.len() + b.len() + c.len(),
        a.iter().chain(b.iter()).chain(c.iter()).copied(),
    )
}

fn split(z: &Vector, n: usize, m: usize) -> (Vector, Vector, Vector) {
    let p = z.len() - n - m;
    (
        z.rows(0, n).into_owned(),
        z.rows(n, m).into_owned(),
        z.rows(n + m, p).into_owned(),
    )
}

fn extrapolate(prev: Option<&Vector>, cur: &Vector) -> Vector {
    match prev {
        Some(p) => cur * 2.0 - p,
        None => cur.clone(),
    }
}

/// Runs `steps` plant steps under a controller given in residual form.
///
/// `x_1` follows from `u0` alone; afterwards each iteration solves the
/// stacked plant and controller residuals by one Newton solve. The joint
/// Jacobian at the first solve must have condition number below
/// [`INVERTIBILITY_CONDITION_LIMIT`].
#[allow(clippy::too_many_arguments)]
pub fn simulate_closed_loop<P, C>(
    plant: &P,
    controller: &C,
    x0: &Vector,
    u0: &Vector,
    controller_init: Option<&Vector>,
    steps: usize,
    settings: &NewtonSettings,
    feedforward: Option<Feedforward<'_>>,
) -> Result<ClosedLoopRun, DynamicsError>
where
    P: SampledModel + ?Sized,
    C: LoopController + ?Sized,
{
    let n = plant.state_dim();
    let m = plant.input_dim();
    let p = controller.state_dim();
    check_dim("initial state", n, x0)?;
    check_dim("initial input", m, u0)?;
    if controller.input_dim() != m {
        return Err(DynamicsError::DimensionMismatch {
            what: "controller input",
            expected: m,
            actual: controller.input_dim(),
        });
    }
    if steps == 0 {
        return Err(DynamicsError::EmptyInputs);
    }
    let delta = plant.delta();
    let applied_at = |k: usize, x: &Vector, u: &Vector| match feedforward {
        Some(ff) => u + ff(k, x),
        None => u.clone(),
    };

    let mut states = Vec::with_capacity(steps + 1);
    let mut designed = Vec::with_capacity(steps);
    let mut applied = Vec::with_capacity(steps);
    let mut ctrl = Vec::with_capacity(steps);

    states.push(x0.clone());
    designed.push(u0.clone());
    applied.push(applied_at(0, x0, u0));
    let x1 = plant
        .step(0, x0, &applied[0], settings)
        .map_err(|cause| DynamicsError::StepFailure { k: 0, cause })?;
    let c0 = match controller_init {
        Some(c) => c.clone(),
        None => controller.initial_state(x0, &x1, u0),
    };
    check_dim("controller state", p, &c0)?;
    states.push(x1);
    ctrl.push(c0);

    let mut initial_condition = f64::NAN;
    for k in 0..steps - 1 {
        let xk = states[k].clone();
        let xk1 = states[k + 1].clone();
        let uk = designed[k].clone();
        let ck = ctrl[k].clone();

        let residual = |z: &Vector| {
            let (x2, u1, c1) = split(z, n, m);
            let a1 = applied_at(k + 1, &xk1, &u1);
            let rp = plant.step_residual(k + 1, &xk1, &x2, &a1);
            let rc = controller.residual(&LoopWindow {
                k,
                delta,
                x: [&xk, &xk1, &x2],
                u: [&uk, &u1],
                c: [&ck, &c1],
            });
            Vector::from_iterator(n + m + p, rp.iter().chain(rc.iter()).copied())
        };
        let jacobian = |z: &Vector| {
            let (x2, u1, c1) = split(z, n, m);
            let a1 = applied_at(k + 1, &xk1, &u1);
            let mut jac = Matrix::zeros(n + m + p, n + m + p);
            jac.view_mut((0, 0), (n, n))
                .copy_from(&plant.jacobian_next(k + 1, &xk1, &x2, &a1));
            jac.view_mut((0, n), (n, m))
                .copy_from(&plant.jacobian_input(k + 1, &xk1, &x2, &a1));
            let jc = controller.jacobian(&LoopWindow {
                k,
                delta,
                x: [&xk, &xk1, &x2],
                u: [&uk, &u1],
                c: [&ck, &c1],
            });
            jac.view_mut((n, 0), (m + p, n + m + p)).copy_from(&jc);
            jac
        };

        let mut x_guess = extrapolate(Some(&xk), &xk1);
        if !plant.admissible(&x_guess) {
            x_guess = xk1.clone();
        }
        let guess = stack(
            &x_guess,
            &extrapolate(k.checked_sub(1).map(|j| &designed[j]), &uk),
            &extrapolate(k.checked_sub(1).map(|j| &ctrl[j]), &ck),
        );
        if k == 0 {
            initial_condition = condition_number(&jacobian(&guess));
            if !(initial_condition <= INVERTIBILITY_CONDITION_LIMIT) {
                return Err(DynamicsError::IllPosed {
                    condition: initial_condition,
                });
            }
        }
        let z = solve_newton_guarded(residual, jacobian, &guess, settings, |z| {
            plant.admissible(&z.rows(0, n).into_owned())
        })
        .map_err(|cause| DynamicsError::StepFailure { k: k + 1, cause })?;
        let (x2, u1, c1) = split(&z, n, m);
        applied.push(applied_at(k + 1, &xk1, &u1));
        states.push(x2);
        designed.push(u1);
        ctrl.push(c1);
    }

    let plant_traj = Trajectory::new(delta, plant.scheme(), states, applied)?
        .with_solver_tolerance(settings.tolerance);
    Ok(ClosedLoopRun {
        plant: plant_traj,
        designed,
        controller_states: ctrl,
        initial_condition,
    })
}
